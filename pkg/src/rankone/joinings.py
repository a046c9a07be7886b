"""Off-diagonal joinings, column/strip geometry, and inequality audits.

The working class of self-joinings is the convex hull of the off-diagonals
Diag(z) (evaluating a rectangle A x B to mu(A cap T^z B)) and the product
measure.  The class is closed under coordinate shift and relative products:

    Diag(a) (x)_X Diag(b) = Diag(b - a),
    anything (x)_X ProductMeasure = ProductMeasure,

so every identity here is exact rational arithmetic.  Rectangle evaluations
go through measured correlations and therefore carry the same error bounds.
All joining values are reported against the normalized measure (total mass
at the final stage scaled to one).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from .construction import Construction
from .errors import DegenerateStrip, NotRelativeProduct, ShiftTooLarge
from .symbolic import (
    DEFAULT_MATERIALIZE_GUARD,
    LevelSet,
    choose_stage,
    correlation,
    pair_count_matrix,
)


def _as_fraction(x) -> Fraction:
    if isinstance(x, float):
        return Fraction(str(x))
    return Fraction(x)


@dataclass(frozen=True)
class Joining:
    """Convex combination of off-diagonals and the product measure.

    ``diag`` maps shift z to its weight; ``product_weight`` is the product
    measure component.  Weights are exact, nonnegative, and sum to one.
    ``symmetric_square`` records provenance: it is set only for measures of
    the form (relative product of some class member with itself), which is
    the hypothesis under which the strip inequality is asserted.
    """

    diag: tuple[tuple[int, Fraction], ...]
    product_weight: Fraction
    symmetric_square: bool = field(default=False, compare=False)

    def __post_init__(self):
        cleaned = tuple(
            (int(z), Fraction(w)) for z, w in sorted(self.diag) if w != 0
        )
        object.__setattr__(self, "diag", cleaned)
        object.__setattr__(self, "product_weight", Fraction(self.product_weight))
        if any(w < 0 for _, w in cleaned) or self.product_weight < 0:
            raise ValueError("joining weights must be nonnegative")
        total = sum((w for _, w in cleaned), Fraction(0)) + self.product_weight
        if total != 1:
            raise ValueError(f"joining weights must sum to 1, got {total}")

    @staticmethod
    def off_diagonal(z: int) -> "Joining":
        flag = z == 0  # the diagonal is its own relative square
        return Joining(((z, Fraction(1)),), Fraction(0), symmetric_square=flag)

    @staticmethod
    def product_measure() -> "Joining":
        return Joining((), Fraction(1), symmetric_square=True)

    @staticmethod
    def mixture(diag_weights: Mapping[int, object], product_weight=0) -> "Joining":
        return Joining(
            tuple((z, _as_fraction(w)) for z, w in diag_weights.items()),
            _as_fraction(product_weight),
        )

    def diag_weight(self, z: int) -> Fraction:
        for zz, w in self.diag:
            if zz == z:
                return w
        return Fraction(0)

    def max_shift(self) -> int:
        return max((abs(z) for z, _ in self.diag), default=0)

    def weights_dict(self) -> dict:
        d = {f"diag:{z}": str(w) for z, w in self.diag}
        if self.product_weight:
            d["product"] = str(self.product_weight)
        return d


@dataclass(frozen=True)
class Rectangle:
    """Product set A x B with both sides at the same stage."""

    first: LevelSet
    second: LevelSet

    def __post_init__(self):
        if self.first.stage != self.second.stage:
            raise ValueError("rectangle sides must share a stage")

    @property
    def stage(self) -> int:
        return self.first.stage


@dataclass(frozen=True)
class ColumnSet:
    """Union of level rectangles at diagonal offset ``offset`` (stage ``stage``).

    For offset k >= 0 the rectangles are T^{i+k}B x T^i B for
    i = 0..h-k, and mirrored for k < 0; there are h - |k| + 1 of them.
    """

    stage: int
    offset: int

    def rectangle_count(self, c: Construction) -> int:
        h = c.heights[self.stage]
        if abs(self.offset) > h:
            raise ShiftTooLarge(f"column offset {self.offset} exceeds height {h}")
        return h - abs(self.offset) + 1


def shift(nu: Joining, z: int) -> Joining:
    """Push forward by (Id x T^z) in shift coordinates: Diag(a) -> Diag(a + z)."""
    return Joining(
        tuple((a + z, w) for a, w in nu.diag),
        nu.product_weight,
        symmetric_square=nu.symmetric_square and z == 0,
    )


def equivalent(nu: Joining, nu2: Joining, Z: int) -> int | None:
    """The shift z with |z| <= Z mapping ``nu`` onto ``nu2``, if one exists."""
    for z in range(-Z, Z + 1):
        if shift(nu, z) == nu2:
            return z
    return None


def relative_product(nu: Joining, nu2: Joining) -> Joining:
    """Relative product over the first coordinate, in class coordinates.

    Bilinear over the class: Diag(a) with Diag(b) gives Diag(b - a); any term
    involving the product measure is absorbed by it.
    """
    out: dict[int, Fraction] = {}
    for a, wa in nu.diag:
        for b, wb in nu2.diag:
            key = b - a
            out[key] = out.get(key, Fraction(0)) + wa * wb
    pm = nu.product_weight + nu2.product_weight - nu.product_weight * nu2.product_weight
    return Joining(
        tuple(out.items()), pm, symmetric_square=(nu == nu2)
    )


def diagonal_component(eta: Joining) -> Fraction:
    """Exact weight of the diagonal Diag(0)."""
    return eta.diag_weight(0)


def diagonal_component_matrix(M, members) -> float:
    """Identity coefficient of a matrix-form joining, via the fitter."""
    from .operators import nnls_decompose

    return nnls_decompose(M, members).identity_coefficient


# ---------------------------------------------------------------------------
# Evaluation against a construction
# ---------------------------------------------------------------------------


def evaluate(
    c: Construction,
    nu: Joining,
    rect: Rectangle,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> tuple[Fraction, Fraction]:
    """Normalized nu(A x B) with accumulated error bound."""
    A, B = rect.first, rect.second
    if K is None:
        K = choose_stage(c, rect.stage, nu.max_shift())
    total = c.total_mass
    value = nu.product_weight * A.measure(c) * B.measure(c) / (total * total)
    error = Fraction(0)
    for z, w in nu.diag:
        cv = correlation(c, A, B, z, K=K, guard=guard)
        value += w * cv.value / total
        error += w * cv.error_bound / total
    return value, error


def column_measure(
    c: Construction,
    nu: Joining,
    column: ColumnSet,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> tuple[Fraction, Fraction]:
    """Normalized nu(C^k_j), by the closed column form.

    Each of the h - |k| + 1 rectangles contributes mu(B cap T^{z-k} B) for a
    Diag(z) term and mu(B)^2 for the product term.
    """
    j = column.stage
    count = column.rectangle_count(c)
    base = LevelSet.single(j, 0)
    if K is None:
        K = choose_stage(c, j, nu.max_shift() + abs(column.offset))
    total = c.total_mass
    base_mass = c.level_measure(j) / total
    value = nu.product_weight * count * base_mass * base_mass
    error = Fraction(0)
    for z, w in nu.diag:
        cv = correlation(c, base, base, z - column.offset, K=K, guard=guard)
        value += w * count * cv.value / total
        error += w * count * cv.error_bound / total
    return value, error


@dataclass(frozen=True)
class StripAuditReport:
    """Strip mass versus the coverage-squared lower bound."""

    stage: int
    epsilon: Fraction
    strip_halfwidth: int
    eta_strip: Fraction
    error_bound: Fraction
    coverage: Fraction
    lower_bound: Fraction
    margin: Fraction
    passed: bool
    eta_box: Fraction
    box_mass_sq: Fraction

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epsilon": str(self.epsilon),
            "strip_halfwidth": self.strip_halfwidth,
            "eta_D": str(self.eta_strip),
            "error_bound": str(self.error_bound),
            "coverage": str(self.coverage),
            "bound": str(self.lower_bound),
            "margin": str(self.margin),
            "pass": self.passed,
            "eta_box": str(self.eta_box),
            "box_mass_sq": str(self.box_mass_sq),
        }


def strip_audit(
    c: Construction,
    eta: Joining,
    j: int,
    epsilon,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> StripAuditReport:
    """Check eta(D^eps_j) against eps^2 * coverage^2 for a relative square.

    Also reports the corner box U^eps x U^eps, whose mass dominates the
    square of its side mass for relative squares.
    """
    if not eta.symmetric_square:
        raise NotRelativeProduct("strip inequality is asserted for relative squares only")
    epsilon = _as_fraction(epsilon)
    h = c.heights[j]
    halfwidth = int(epsilon * h)  # floor
    if K is None:
        K = choose_stage(c, j, eta.max_shift() + halfwidth)
    eta_strip = Fraction(0)
    error = Fraction(0)
    for k in range(-halfwidth, halfwidth + 1):
        v, e = column_measure(c, eta, ColumnSet(j, k), K=K, guard=guard)
        eta_strip += v
        error += e
    beta_hat = c.coverage(j)
    bound = epsilon * epsilon * beta_hat * beta_hat
    box = LevelSet(j, tuple(range(min(halfwidth + 1, h))))
    eta_box, _ = evaluate(c, eta, Rectangle(box, box), K=K, guard=guard)
    box_mass = box.normalized_measure(c)
    return StripAuditReport(
        stage=j,
        epsilon=epsilon,
        strip_halfwidth=halfwidth,
        eta_strip=eta_strip,
        error_bound=error,
        coverage=beta_hat,
        lower_bound=bound,
        margin=eta_strip - bound,
        passed=eta_strip > bound,
        eta_box=eta_box,
        box_mass_sq=box_mass * box_mass,
    )


# ---------------------------------------------------------------------------
# Strip-conditioned product-measure component
# ---------------------------------------------------------------------------


def _family_mixing_floor(
    c: Construction,
    j: int,
    n: int,
    family: Sequence[LevelSet],
    K: int,
    guard: int,
) -> Fraction:
    """min over family pairs of (measured - bound) / (mu(A) mu(B)), in [0, 1]."""
    counts, unit, error = pair_count_matrix(c, j, n, K=K, guard=guard)
    h = c.heights[j]
    total = c.total_mass
    indicators = np.zeros((len(family), h), dtype=np.int64)
    for i, s in enumerate(family):
        indicators[i, list(s.indices)] = 1
    gram = indicators @ counts @ indicators.T  # gram[a_idx, b_idx] pair counts
    best: Fraction | None = None
    for ai, A in enumerate(family):
        for bi, B in enumerate(family):
            denom = A.normalized_measure(c) * B.normalized_measure(c)
            if denom == 0:
                continue
            val = (int(gram[ai, bi]) * unit - error) / total
            ratio = val / denom
            if best is None or ratio < best:
                best = ratio
    if best is None:
        raise DegenerateStrip("family has no positive-measure pairs")
    return min(max(best, Fraction(0)), Fraction(1))


@dataclass(frozen=True)
class ComponentAuditReport:
    """Product-measure component of the strip-conditioned measure."""

    stage: int
    epsilon: Fraction
    component: Fraction
    alpha_hat: Fraction
    coverage: Fraction
    lower_bound: Fraction
    bound_positive: bool
    component_meets_bound: bool
    strip_mass: Fraction

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "epsilon": str(self.epsilon),
            "component": str(self.component),
            "alpha_hat": str(self.alpha_hat),
            "coverage": str(self.coverage),
            "lower_bound": str(self.lower_bound),
            "bound_positive": self.bound_positive,
            "component_meets_bound": self.component_meets_bound,
            "strip_mass": str(self.strip_mass),
        }


def mu2_component_audit(
    c: Construction,
    nu: Joining,
    j: int,
    epsilon,
    K: int | None = None,
    family: Sequence[LevelSet] | None = None,
    alpha_scan: Iterable[int] | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> ComponentAuditReport:
    """Estimate the product-measure part of nu conditioned on the strip.

    The strip-conditioned measure is a convex combination of column-restricted
    off-diagonals weighted by a^z = nu(C^z) / nu(D^eps); each off-diagonal at
    shift z carries a product component at least the measured mixing floor at
    z, and the combination is compared with the partial-mixing lower bound
    alpha + coverage - 1 - eps * coverage.
    """
    epsilon = _as_fraction(epsilon)
    h = c.heights[j]
    halfwidth = int(epsilon * h)
    if K is None:
        K = choose_stage(c, j, nu.max_shift() + max(halfwidth, 4 * h))
    if family is None:
        family = [LevelSet.single(j, i) for i in range(min(h, 8))]
    column_masses = {}
    strip_mass = Fraction(0)
    for k in range(-halfwidth, halfwidth + 1):
        v, _ = column_measure(c, nu, ColumnSet(j, k), K=K, guard=guard)
        column_masses[k] = v
        strip_mass += v
    if strip_mass == 0:
        raise DegenerateStrip("conditioning strip has zero mass")
    component = Fraction(0)
    for k, v in column_masses.items():
        if v == 0:
            continue
        weight = v / strip_mass
        component += weight * _family_mixing_floor(c, j, k, family, K, guard)
    if alpha_scan is None:
        alpha_scan = [4 * h + t * (h + 1) for t in range(8)]
    alpha_hat: Fraction | None = None
    for n in alpha_scan:
        floor_n = _family_mixing_floor(c, j, int(n), family, K, guard)
        if alpha_hat is None or floor_n < alpha_hat:
            alpha_hat = floor_n
    beta_hat = c.coverage(j)
    bound = alpha_hat + beta_hat - 1 - epsilon * beta_hat
    return ComponentAuditReport(
        stage=j,
        epsilon=epsilon,
        component=component,
        alpha_hat=alpha_hat,
        coverage=beta_hat,
        lower_bound=bound,
        bound_positive=bound > 0,
        component_meets_bound=component >= bound,
        strip_mass=strip_mass,
    )


def symmetrized_measure(c: Construction, rect: Rectangle) -> Fraction:
    """Normalized mass of the swap-quotient image of A x B.

    The image is (A x B) union (B x A); inclusion-exclusion over the product
    measure gives 2 mu(A) mu(B) - mu(A cap B)^2.
    """
    A, B = rect.first, rect.second
    mu_a = A.normalized_measure(c)
    mu_b = B.normalized_measure(c)
    common = LevelSet(A.stage, tuple(set(A.indices) & set(B.indices)))
    mu_ab = common.normalized_measure(c)
    return 2 * mu_a * mu_b - mu_ab * mu_ab
