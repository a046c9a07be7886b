"""Cutting-and-stacking constructions: spacer plans, exact tower data, presets.

A rank-one construction is determined by per-stage cut counts ``r_j`` and
spacer counts ``s_j(i)`` (one per column).  Stage ``j`` is a tower of height
``h_j`` over a base of exact rational mass, and stacking gives

    h_{j+1} = r_j * h_j + sum_i s_j(i),      base_{j+1} = base_j / r_j.

Everything is computed with Python integers and :class:`fractions.Fraction`,
so the recursion invariants hold bit for bit and can be asserted per stage.
Tower masses are nondecreasing; the mass at the final stage is used as the
normalizer for coverage and for all probability-space quantities downstream.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import InfeasiblePairing, InfeasiblePlan, StageOverflow
from .rng import uniform_int

DEFAULT_HEIGHT_GUARD = 10**18

FLAT = "flat"
PATTERN = "pattern"
STOCHASTIC = "stochastic"
KATOK_MIXED = "katok-mixed"


@dataclass(frozen=True)
class SpacerPlan:
    """Recipe for one stage's spacer counts, one count per column.

    Variants:
      * ``flat``: every column gets ``value`` spacers.
      * ``pattern``: explicit per-column values; the pattern length must equal
        the stage's cut count.
      * ``stochastic``: independent uniform draws on {0, ..., bound}, keyed by
        (seed, stage, column).
      * ``katok-mixed``: ``q`` stochastic draws, then ``q`` zeros, then ``q``
        ones; the cut count must be ``3 * q``.
    """

    kind: str
    value: int = 0
    values: tuple[int, ...] = ()
    bound: int = 0
    seed: int = 0
    q: int = 0

    @staticmethod
    def flat(value: int) -> "SpacerPlan":
        if value < 0:
            raise InfeasiblePlan("flat spacer value must be nonnegative")
        return SpacerPlan(kind=FLAT, value=value)

    @staticmethod
    def pattern(values: Sequence[int]) -> "SpacerPlan":
        vals = tuple(int(v) for v in values)
        if any(v < 0 for v in vals):
            raise InfeasiblePlan("pattern values must be nonnegative")
        return SpacerPlan(kind=PATTERN, values=vals)

    @staticmethod
    def stochastic(bound: int, seed: int) -> "SpacerPlan":
        if bound <= 0:
            raise InfeasiblePlan("stochastic bound must be positive")
        return SpacerPlan(kind=STOCHASTIC, bound=bound, seed=seed)

    @staticmethod
    def katok_mixed(q: int, bound: int, seed: int) -> "SpacerPlan":
        if q <= 0:
            raise InfeasiblePlan("katok block length must be positive")
        if bound <= 0:
            raise InfeasiblePlan("stochastic bound must be positive")
        return SpacerPlan(kind=KATOK_MIXED, q=q, bound=bound, seed=seed)

    def expand(self, cut_count: int, stage: int) -> np.ndarray:
        """Expanded per-column spacer counts for a stage with ``cut_count`` columns."""
        if self.kind == FLAT:
            out = np.full(cut_count, self.value, dtype=np.int64)
        elif self.kind == PATTERN:
            if len(self.values) != cut_count:
                raise InfeasiblePlan(
                    f"pattern length {len(self.values)} != cut count {cut_count} at stage {stage}"
                )
            out = np.asarray(self.values, dtype=np.int64)
        elif self.kind == STOCHASTIC:
            out = np.fromiter(
                (uniform_int(self.seed, stage, col, self.bound) for col in range(cut_count)),
                count=cut_count,
                dtype=np.int64,
            )
        elif self.kind == KATOK_MIXED:
            if cut_count != 3 * self.q:
                raise InfeasiblePlan(
                    f"katok-mixed needs cut count {3 * self.q}, got {cut_count} at stage {stage}"
                )
            out = np.empty(cut_count, dtype=np.int64)
            for col in range(self.q):
                out[col] = uniform_int(self.seed, stage, col, self.bound)
            out[self.q : 2 * self.q] = 0
            out[2 * self.q :] = 1
        else:
            raise InfeasiblePlan(f"unknown spacer plan kind {self.kind!r}")
        out.setflags(write=False)
        return out

    def describe(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == FLAT:
            d["value"] = self.value
        elif self.kind == PATTERN:
            d["values"] = list(self.values)
        elif self.kind == STOCHASTIC:
            d.update(bound=self.bound, seed=self.seed)
        elif self.kind == KATOK_MIXED:
            d.update(q=self.q, bound=self.bound, seed=self.seed)
        return d


@dataclass(frozen=True)
class StageParams:
    """Cut count and spacer plan for one stacking step."""

    cut_count: int
    plan: SpacerPlan

    def __post_init__(self):
        if self.cut_count < 2:
            raise InfeasiblePlan("cut count must be at least 2")


@dataclass(frozen=True)
class ConstructionParams:
    """Declarative plan: one :class:`StageParams` per stacking step.

    ``max_stage`` is the number of steps; realized stage indices run from 0
    (a single base level of height ``initial_height``) to ``max_stage``.
    """

    stages: tuple[StageParams, ...]
    initial_height: int = 1
    height_guard: int | None = DEFAULT_HEIGHT_GUARD

    def __post_init__(self):
        if not self.stages:
            raise InfeasiblePlan("at least one stage is required")
        if self.initial_height < 1:
            raise InfeasiblePlan("initial height must be positive")

    @property
    def max_stage(self) -> int:
        return len(self.stages)


@dataclass(frozen=True, eq=False)
class Construction:
    """A fully realized construction: exact heights, spacers and masses.

    Immutable after :func:`realize`; safe to share across threads.  The
    ``_cache`` dict holds derived artifacts (materialized names, descent
    maps); it is keyed by value and only ever extended, never invalidated.
    """

    params: ConstructionParams
    heights: tuple[int, ...]
    spacers: tuple[np.ndarray, ...]
    base_masses: tuple[Fraction, ...]
    tower_masses: tuple[Fraction, ...]
    total_mass: Fraction
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def max_stage(self) -> int:
        return self.params.max_stage

    def cut_count(self, j: int) -> int:
        return self.params.stages[j].cut_count

    def height(self, j: int) -> int:
        return self.heights[j]

    def level_measure(self, j: int) -> Fraction:
        """Unnormalized mass of one stage-``j`` level, mu(B_j)."""
        return self.base_masses[j]

    def normalized_level_measure(self, j: int) -> Fraction:
        return self.base_masses[j] / self.total_mass

    def coverage(self, j: int) -> Fraction:
        """Tower-mass fraction at stage ``j`` relative to the final stage."""
        if not 0 <= j <= self.max_stage:
            raise IndexError(f"stage {j} out of range")
        return self.tower_masses[j] / self.total_mass

    def report(self) -> dict:
        """JSON-ready exact description (masses as rational strings)."""
        return {
            "initial_height": self.params.initial_height,
            "stages": [
                {
                    "cut_count": sp.cut_count,
                    "plan": sp.plan.describe(),
                    "spacers": [int(v) for v in self.spacers[j]],
                }
                for j, sp in enumerate(self.params.stages)
            ],
            "heights": [str(h) for h in self.heights],
            "base_masses": [str(m) for m in self.base_masses],
            "tower_masses": [str(m) for m in self.tower_masses],
            "total_mass": str(self.total_mass),
            "coverage": [str(self.coverage(j)) for j in range(self.max_stage + 1)],
        }

    def fingerprint(self) -> str:
        blob = json.dumps(self.report(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def coverage(c: Construction, j: int) -> Fraction:
    return c.coverage(j)


def realize(params: ConstructionParams) -> Construction:
    """Expand all spacer plans and compute exact stage data.

    Pure function of (params, seeds): two calls yield bit-identical results.
    Raises :class:`InfeasiblePlan` when a plan cannot fill its stage and
    :class:`StageOverflow` when a height exceeds ``params.height_guard``.
    """
    heights = [params.initial_height]
    spacers = []
    base = [Fraction(1)]
    masses = [Fraction(params.initial_height)]
    guard = params.height_guard
    for j, stage in enumerate(params.stages):
        s = stage.plan.expand(stage.cut_count, j)
        if len(s) != stage.cut_count:
            raise InfeasiblePlan(f"expanded spacer length {len(s)} != {stage.cut_count}")
        h_next = stage.cut_count * heights[j] + int(s.sum())
        if guard is not None and h_next > guard:
            raise StageOverflow(f"height {h_next} exceeds guard {guard} at stage {j + 1}")
        spacers.append(s)
        heights.append(h_next)
        base.append(base[j] / stage.cut_count)
        masses.append(Fraction(h_next) * base[j + 1])
    return Construction(
        params=params,
        heights=tuple(heights),
        spacers=tuple(spacers),
        base_masses=tuple(base),
        tower_masses=tuple(masses),
        total_mass=masses[-1],
    )


def pair_with_offset_one(c: Construction, cut_counts: Sequence[int]) -> Construction:
    """Companion construction with every height shifted up by one.

    The companion's stage-``j`` spacer total is forced by the height
    constraint; it is split over columns as evenly as possible with the
    remainder given to the leading columns, and the resulting explicit
    pattern is recorded in the output params.
    """
    if len(cut_counts) != c.max_stage:
        raise InfeasiblePairing(0, "need one cut count per stage")
    stages = []
    for j, r in enumerate(cut_counts):
        r = int(r)
        if r < 2:
            raise InfeasiblePairing(j, "cut count must be at least 2")
        total = (c.heights[j + 1] + 1) - r * (c.heights[j] + 1)
        if total < 0:
            raise InfeasiblePairing(j)
        quot, rem = divmod(total, r)
        values = [quot + 1] * rem + [quot] * (r - rem)
        stages.append(StageParams(r, SpacerPlan.pattern(values)))
    paired = realize(
        ConstructionParams(
            stages=tuple(stages),
            initial_height=c.params.initial_height + 1,
            height_guard=c.params.height_guard,
        )
    )
    assert all(
        paired.heights[j] == c.heights[j] + 1 for j in range(c.max_stage + 1)
    ), "pairing must shift every height by one"
    return paired


@dataclass(frozen=True, eq=False)
class ProductSystem:
    """Finite tensor power: a tuple of realized factors.

    Correlations of rectangles factor coordinatewise, so all product
    quantities are computed from per-factor data (see ``estimators``).
    """

    factors: tuple[Construction, ...]

    def __post_init__(self):
        if not self.factors:
            raise InfeasiblePlan("a product needs at least one factor")

    @property
    def arity(self) -> int:
        return len(self.factors)


def tensor_power(constructions: Sequence[Construction]) -> ProductSystem:
    return ProductSystem(factors=tuple(constructions))


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def odometer_params(stages: int, cut_count: int = 2) -> ConstructionParams:
    """Zero-spacer preset; with cut count 2 this is the dyadic odometer."""
    return ConstructionParams(
        stages=tuple(StageParams(cut_count, SpacerPlan.flat(0)) for _ in range(stages))
    )


def chacon_params(stages: int) -> ConstructionParams:
    """Three cuts with a single middle spacer at every stage."""
    return ConstructionParams(
        stages=tuple(StageParams(3, SpacerPlan.pattern((0, 1, 0))) for _ in range(stages))
    )


def ornstein_params(
    stages: int,
    seed: int,
    epsilon: Fraction = Fraction(1, 2),
    cut_count: int = 12,
    taper: int = 2,
) -> ConstructionParams:
    """Flat columns plus a stochastic block of columns at every stage.

    A fraction ``1 - epsilon`` of the columns gets no spacers (the flat part);
    the rest draw uniformly on {0, ..., bound_j} with ``bound_j`` tapering
    geometrically relative to the height.  Bounds are scaled so the total
    spacer mass drives early-stage coverage toward ``1 - epsilon``.
    """
    import math

    epsilon = Fraction(epsilon)
    if not 0 < epsilon < 1:
        raise InfeasiblePlan("epsilon must be in (0, 1)")
    flat_cols = int(round((1 - epsilon) * cut_count))
    flat_cols = min(max(flat_cols, 1), cut_count - 1)
    stoch_cols = cut_count - flat_cols
    # per-stage expected mass growth is scale / taper^(j+1); pick scale so the
    # growth factors multiply out to 1/(1 - epsilon) over a fixed long horizon,
    # making coverage approach the target monotonically as stages are added
    target = -math.log(1 - float(epsilon))
    lo, hi = 0.0, 64.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if sum(math.log1p(mid / taper ** (j + 1)) for j in range(32)) < target:
            lo = mid
        else:
            hi = mid
    scale = Fraction(0.5 * (lo + hi)).limit_denominator(4096)
    stages_out = []
    h = 1
    for j in range(stages):
        bound = max(1, int(scale * 2 * h * cut_count / stoch_cols) // (taper ** (j + 1)))
        values = [0] * flat_cols + [
            uniform_int(seed, j, flat_cols + col, bound) for col in range(stoch_cols)
        ]
        stages_out.append(StageParams(cut_count, SpacerPlan.pattern(values)))
        h = cut_count * h + sum(values)
    return ConstructionParams(stages=tuple(stages_out))


def ornstein_steep_cut_params(
    stages: int,
    seed: int,
    epsilon: Fraction = Fraction(1, 2),
    cut_cap: int = 200_000,
) -> ConstructionParams:
    """Cut counts forced above the cube of the height, capped for feasibility.

    Growth stops before any stage whose cube-scale cut count would exceed
    ``cut_cap`` columns, which keeps the steep-cut regime exercisable at desk
    scale; at least one stage must fit or the plan is infeasible.
    """
    epsilon = Fraction(epsilon)
    stages_out = []
    h = 1
    for j in range(stages):
        r = max(8, h**3 + 1)
        if r > cut_cap:
            break
        flat_cols = int(round((1 - epsilon) * r))
        flat_cols = min(max(flat_cols, 1), r - 1)
        bound = max(1, h // (2 ** (j + 1)))
        values = [0] * flat_cols + [
            uniform_int(seed, j, flat_cols + col, bound) for col in range(r - flat_cols)
        ]
        stages_out.append(StageParams(r, SpacerPlan.pattern(values)))
        h = r * h + sum(values)
    if not stages_out:
        raise InfeasiblePlan("cut cap too small for even one stage")
    return ConstructionParams(stages=tuple(stages_out))


def katok_params(
    stages: int,
    seed: int,
    q0: int = 3,
    height_cap: int = 10**6,
) -> ConstructionParams:
    """Stochastic block, zero block, one block, with block length near the height.

    ``q_j`` tracks ``h_j`` (at least ``q0``) and the stochastic bound grows
    like ``2 h_j`` so stochastic zero draws become rare at later stages.
    Stage growth stops once the next height would exceed ``height_cap``.
    """
    stages_out = []
    h = 1
    for j in range(stages):
        q = max(q0, (h + 1) // 2)
        bound = max(3, 2 * h)
        plan = SpacerPlan.katok_mixed(q=q, bound=bound, seed=seed)
        draws = [uniform_int(seed, j, col, bound) for col in range(q)]
        h_next = 3 * q * h + sum(draws) + q
        if stages_out and h_next > height_cap:
            break
        stages_out.append(StageParams(3 * q, plan))
        h = h_next
    return ConstructionParams(stages=tuple(stages_out))


PRESET_BUILDERS = {
    "odometer": lambda stages, seed, **kw: odometer_params(stages, **kw),
    "chacon": lambda stages, seed, **kw: chacon_params(stages),
    "ornstein": lambda stages, seed, **kw: ornstein_params(stages, seed, **kw),
    "ornstein-steep": lambda stages, seed, **kw: ornstein_steep_cut_params(stages, seed, **kw),
    "katok": lambda stages, seed, **kw: katok_params(stages, seed, **kw),
}


def preset_params(name: str, stages: int, seed: int = 0, **kwargs) -> ConstructionParams:
    try:
        builder = PRESET_BUILDERS[name]
    except KeyError:
        raise InfeasiblePlan(f"unknown preset {name!r}") from None
    return builder(stages, seed, **kwargs)


def paired_preset(
    name: str, stages: int, seed: int = 0, pair_cut_counts: Sequence[int] | None = None, **kwargs
) -> tuple[Construction, Construction]:
    """A preset together with its height-plus-one companion.

    Default companion cut counts reuse the source cut counts, falling back to
    2 when that split is infeasible at some stage.
    """
    base = realize(preset_params(name, stages, seed, **kwargs))
    if pair_cut_counts is None:
        counts = []
        for j in range(base.max_stage):
            r = base.cut_count(j)
            while r >= 2 and (base.heights[j + 1] + 1) - r * (base.heights[j] + 1) < 0:
                r -= 1
            counts.append(max(r, 2))
        pair_cut_counts = counts
    return base, pair_with_offset_one(base, pair_cut_counts)


# ---------------------------------------------------------------------------
# Declarative construction specs (used by the CLI and by config files)
# ---------------------------------------------------------------------------


def params_from_spec(spec: dict, default_seed: int = 0) -> ConstructionParams:
    """Build params from a declarative dict.

    Two shapes are accepted::

        {"preset": "chacon", "stages": 8}
        {"stages": [{"cuts": 3, "spacers": {"kind": "pattern", "values": [0, 1, 0]}}, ...],
         "initial_height": 1}

    Stochastic plans default their seed to ``default_seed`` when omitted.
    """
    if "preset" in spec:
        kwargs = dict(spec.get("options", {}))
        if "epsilon" in kwargs:
            kwargs["epsilon"] = Fraction(str(kwargs["epsilon"]))
        return preset_params(
            spec["preset"],
            stages=int(spec.get("stages", 6)),
            seed=int(spec.get("seed", default_seed)),
            **kwargs,
        )
    if "stages" not in spec or not isinstance(spec["stages"], list):
        raise InfeasiblePlan("construction spec needs 'preset' or a 'stages' list")
    stages = []
    for j, st in enumerate(spec["stages"]):
        try:
            cuts = int(st["cuts"])
            plan_spec = st["spacers"]
            kind = plan_spec["kind"]
        except (KeyError, TypeError) as exc:
            raise InfeasiblePlan(f"malformed stage {j}: {exc}") from None
        if kind == FLAT:
            plan = SpacerPlan.flat(int(plan_spec["value"]))
        elif kind == PATTERN:
            plan = SpacerPlan.pattern(plan_spec["values"])
        elif kind == STOCHASTIC:
            plan = SpacerPlan.stochastic(
                int(plan_spec["bound"]), int(plan_spec.get("seed", default_seed))
            )
        elif kind == KATOK_MIXED:
            plan = SpacerPlan.katok_mixed(
                int(plan_spec["q"]),
                int(plan_spec["bound"]),
                int(plan_spec.get("seed", default_seed)),
            )
        else:
            raise InfeasiblePlan(f"unknown spacer kind {kind!r} at stage {j}")
        stages.append(StageParams(cuts, plan))
    guard = spec.get("height_guard", DEFAULT_HEIGHT_GUARD)
    return ConstructionParams(
        stages=tuple(stages),
        initial_height=int(spec.get("initial_height", 1)),
        height_guard=None if guard is None else int(guard),
    )
