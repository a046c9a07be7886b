"""Desk-scale estimators for partial mixing, partial rigidity, and local rank.

These replace asymptotic liminf/limsup quantities with min/max over declared
finite scans, so every report carries a mandatory caveat.  The claim-direction
convention keeps estimates conservative: mixing floors subtract the error
bound (alpha is an inf-type quantity), rigidity peaks add it (rho is a sup
type).  All ratios use the normalized measure.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .construction import Construction, ProductSystem
from .errors import EmptyRange, NotPaired, StageMismatch
from .symbolic import (
    DEFAULT_MATERIALIZE_GUARD,
    LevelSet,
    correlation,
    pair_count_matrix,
)

SCAN_CAVEAT = "finite-scan estimate of an asymptotic quantity"

DEFAULT_FAMILY_CAP = 64


@dataclass(frozen=True)
class TestFamily:
    """Finite stand-in for 'all measurable sets' at one stage."""

    stage: int
    sets: tuple[LevelSet, ...]

    def __post_init__(self):
        if not self.sets:
            raise EmptyRange("test family must be nonempty")
        if any(s.stage != self.stage for s in self.sets):
            raise StageMismatch("family sets must share the stage")
        if any(len(s) == 0 for s in self.sets):
            raise EmptyRange("family sets must have positive measure")

    def describe(self) -> str:
        return f"stage {self.stage}, {len(self.sets)} sets"


def default_family(c: Construction, j: int, cap: int = DEFAULT_FAMILY_CAP) -> TestFamily:
    """Single levels plus aligned dyadic unions, capped at ``cap`` sets."""
    h = c.heights[j]
    sets: list[LevelSet] = []
    for i in range(min(h, cap)):
        sets.append(LevelSet.single(j, i))
    size = 2
    while len(sets) < cap and size < h:
        for start in range(0, h - size + 1, size):
            sets.append(LevelSet(j, tuple(range(start, start + size))))
            if len(sets) >= cap:
                break
        size *= 2
    return TestFamily(j, tuple(sets))


@dataclass(frozen=True)
class EstimateReport:
    """One scanned estimate; ``caveat`` is part of the contract."""

    quantity: str
    value: float
    exact: Fraction
    scan: str
    family: str
    caveat: str = SCAN_CAVEAT

    def to_dict(self) -> dict:
        return {
            "quantity": self.quantity,
            "value": self.value,
            "exact": str(self.exact),
            "scan": self.scan,
            "family": self.family,
            "caveat": self.caveat,
        }


def _clamp_unit(x: Fraction) -> Fraction:
    return min(max(x, Fraction(0)), Fraction(1))


def _family_grams(
    c: Construction,
    fam: TestFamily,
    n: int,
    K: int | None,
    guard: int,
) -> tuple[np.ndarray, Fraction, Fraction]:
    counts, unit, error = pair_count_matrix(c, fam.stage, n, K=K, guard=guard)
    h = c.heights[fam.stage]
    ind = np.zeros((len(fam.sets), h), dtype=np.int64)
    for i, s in enumerate(fam.sets):
        ind[i, list(s.indices)] = 1
    gram = ind @ counts @ ind.T
    return gram, unit, error


def estimate_alpha(
    c: Construction,
    fam: TestFamily,
    n_range: Iterable[int],
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> EstimateReport:
    """Partial-mixing floor: min over times and set pairs of the pessimistic
    correlation ratio (value minus bound over product of masses)."""
    times = sorted(set(int(n) for n in n_range))
    if not times:
        raise EmptyRange("alpha scan needs at least one time")
    total = c.total_mass
    best: Fraction | None = None
    for n in times:
        gram, unit, error = _family_grams(c, fam, n, K, guard)
        for ai, A in enumerate(fam.sets):
            mu_a = A.normalized_measure(c)
            for bi, B in enumerate(fam.sets):
                denom = mu_a * B.normalized_measure(c)
                ratio = ((int(gram[ai, bi]) * unit - error) / total) / denom
                if best is None or ratio < best:
                    best = ratio
    value = _clamp_unit(best)
    return EstimateReport(
        quantity="alpha",
        value=float(value),
        exact=value,
        scan=f"times {times[0]}..{times[-1]} ({len(times)})",
        family=fam.describe(),
    )


def estimate_rho(
    c: Construction,
    fam: TestFamily,
    n_range: Iterable[int],
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> EstimateReport:
    """Partial-rigidity peak: max over times >= 1 of the worst optimistic
    return ratio over the family."""
    times = sorted(set(int(n) for n in n_range))
    if not times:
        raise EmptyRange("rho scan needs at least one time")
    if times[0] < 1:
        raise EmptyRange("rho scan times must be >= 1")
    total = c.total_mass
    best: Fraction | None = None
    for n in times:
        gram, unit, error = _family_grams(c, fam, n, K, guard)
        worst: Fraction | None = None
        for ai, A in enumerate(fam.sets):
            ratio = ((int(gram[ai, ai]) * unit + error) / total) / A.normalized_measure(c)
            if worst is None or ratio < worst:
                worst = ratio
        if best is None or worst > best:
            best = worst
    value = _clamp_unit(best)
    return EstimateReport(
        quantity="rho",
        value=float(value),
        exact=value,
        scan=f"times {times[0]}..{times[-1]} ({len(times)})",
        family=fam.describe(),
    )


@dataclass(frozen=True)
class MildMixingRecord:
    indices: tuple[int, ...]
    peak_ratio: float
    peak_time: int
    flagged: bool


@dataclass(frozen=True)
class MildMixingReport:
    stage: int
    threshold: float
    records: tuple[MildMixingRecord, ...]
    scan: str

    @property
    def any_flagged(self) -> bool:
        return any(r.flagged for r in self.records)

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "threshold": self.threshold,
            "scan": self.scan,
            "any_flagged": self.any_flagged,
            "records": [
                {
                    "indices": list(r.indices),
                    "peak_ratio": r.peak_ratio,
                    "peak_time": r.peak_time,
                    "flagged": r.flagged,
                }
                for r in self.records
            ],
        }


def mild_mixing_audit(
    c: Construction,
    fam: TestFamily,
    n_range: Iterable[int],
    threshold: float = 0.2,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> MildMixingReport:
    """Flag rigid-suspect sets: peak return ratio above 1 - threshold."""
    times = sorted(set(int(n) for n in n_range))
    if not times or times[0] < 1:
        raise EmptyRange("mild-mixing scan needs times >= 1")
    peaks = [Fraction(-1)] * len(fam.sets)
    peak_times = [times[0]] * len(fam.sets)
    for n in times:
        gram, unit, _ = _family_grams(c, fam, n, K, guard)
        for ai, A in enumerate(fam.sets):
            ratio = Fraction(int(gram[ai, ai])) * unit / A.measure(c)
            if ratio > peaks[ai]:
                peaks[ai] = ratio
                peak_times[ai] = n
    gate = 1 - Fraction(str(threshold))
    records = tuple(
        MildMixingRecord(
            indices=fam.sets[i].indices,
            peak_ratio=float(peaks[i]),
            peak_time=peak_times[i],
            flagged=peaks[i] > gate,
        )
        for i in range(len(fam.sets))
    )
    return MildMixingReport(
        stage=fam.stage,
        threshold=float(threshold),
        records=records,
        scan=f"times {times[0]}..{times[-1]} ({len(times)})",
    )


@dataclass(frozen=True)
class ProductMildMixingReport:
    factor_reports: tuple[MildMixingReport, ...]
    product_records: tuple[MildMixingRecord, ...]
    projection_consistent: bool

    @property
    def any_flagged(self) -> bool:
        return any(r.flagged for r in self.product_records)


def mild_mixing_audit_product(
    ps: ProductSystem,
    fams: Sequence[TestFamily],
    n_range: Iterable[int],
    threshold: float = 0.2,
    Ks: Sequence[int | None] | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> ProductMildMixingReport:
    """Mild-mixing audit for a finite tensor power, on diagonal set tuples.

    Product return ratios factor coordinatewise, so a flagged product tuple
    must project to sets whose factor ratios are at least as large; the
    report verifies this projection consistency explicitly.
    """
    if len(fams) != ps.arity:
        raise StageMismatch("one family per factor required")
    times = sorted(set(int(n) for n in n_range))
    if not times or times[0] < 1:
        raise EmptyRange("mild-mixing scan needs times >= 1")
    if Ks is None:
        Ks = [None] * ps.arity
    factor_reports = [
        mild_mixing_audit(ps.factors[i], fams[i], times, threshold, Ks[i], guard)
        for i in range(ps.arity)
    ]
    width = min(len(f.sets) for f in fams)
    gate = 1 - Fraction(str(threshold))
    product_records = []
    consistent = True
    for idx in range(width):
        peak = Fraction(-1)
        peak_time = times[0]
        for n in times:
            ratio = Fraction(1)
            for i in range(ps.arity):
                fam = fams[i]
                gram, unit, _ = _family_grams(ps.factors[i], fam, n, Ks[i], guard)
                ratio *= Fraction(int(gram[idx, idx])) * unit / fam.sets[idx].measure(ps.factors[i])
            if ratio > peak:
                peak = ratio
                peak_time = n
        flagged = peak > gate
        product_records.append(
            MildMixingRecord(
                indices=fams[0].sets[idx].indices,
                peak_ratio=float(peak),
                peak_time=peak_time,
                flagged=flagged,
            )
        )
        for i in range(ps.arity):
            factor_peak = Fraction(str(factor_reports[i].records[idx].peak_ratio))
            if factor_peak + Fraction(1, 10**9) < peak:
                consistent = False
            if flagged and not factor_reports[i].records[idx].flagged:
                consistent = False
    return ProductMildMixingReport(
        factor_reports=tuple(factor_reports),
        product_records=tuple(product_records),
        projection_consistent=consistent,
    )


def beta_lower_bound(c: Construction, j: int) -> EstimateReport:
    """Tower coverage at stage ``j``: an exact local-rank lower bound."""
    cov = c.coverage(j)
    return EstimateReport(
        quantity="beta",
        value=float(cov),
        exact=cov,
        scan=f"stage {j}",
        family="tower levels",
    )


@dataclass(frozen=True)
class ProductTowerReport:
    stage: int
    heights: tuple[int, int]
    product_height: int
    disjoint: bool
    coverage: Fraction
    factor_coverages: tuple[Fraction, Fraction]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "heights": list(self.heights),
            "product_height": self.product_height,
            "disjoint": self.disjoint,
            "coverage": str(self.coverage),
            "factor_coverages": [str(x) for x in self.factor_coverages],
        }


def product_beta_tower(
    cS: Construction,
    cSt: Construction,
    j: int,
    enumeration_limit: int = 4_000_000,
) -> ProductTowerReport:
    """Product tower of height h*(h+1) for height-paired factors.

    Walks the product base cell through the coprime height pair and verifies
    all h*(h+1) cells are distinct (checked by enumeration up to the limit,
    by the coprimality argument above it).  Product coverage is exactly the
    product of factor coverages.
    """
    h = cS.heights[j]
    ht = cSt.heights[j]
    if ht != h + 1:
        raise NotPaired(f"heights {h} and {ht} do not differ by one")
    steps = h * ht
    if steps <= enumeration_limit:
        k = np.arange(steps, dtype=np.int64)
        cells = (k % h) * ht + (k % ht)
        disjoint = len(np.unique(cells)) == steps
    else:
        import math

        disjoint = math.gcd(h, ht) == 1
    cov_s = cS.coverage(j)
    cov_t = cSt.coverage(j)
    return ProductTowerReport(
        stage=j,
        heights=(h, ht),
        product_height=steps,
        disjoint=disjoint,
        coverage=cov_s * cov_t,
        factor_coverages=(cov_s, cov_t),
    )


def product_correlation(
    ps: ProductSystem,
    rectangles: Sequence[tuple[LevelSet, LevelSet]],
    n: int,
    Ks: Sequence[int | None] | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> tuple[Fraction, Fraction]:
    """Correlation of a product rectangle: the product of factor values.

    The error bound is the exact interval width: product of per-factor upper
    bounds minus the product of values.
    """
    if len(rectangles) != ps.arity:
        raise StageMismatch("one rectangle per factor required")
    if Ks is None:
        Ks = [None] * ps.arity
    value = Fraction(1)
    upper = Fraction(1)
    for i, (A, B) in enumerate(rectangles):
        c = ps.factors[i]
        cv = correlation(c, A, B, n, K=Ks[i], guard=guard)
        value *= cv.value / c.total_mass
        upper *= (cv.value + cv.error_bound) / c.total_mass
    return value, upper - value


def estimate_alpha_product(
    ps: ProductSystem,
    fams: Sequence[TestFamily],
    n_range: Iterable[int],
    Ks: Sequence[int | None] | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> EstimateReport:
    """Product partial-mixing floor: the product of factor floors.

    Correlations of rectangles factor exactly, so the product estimate is
    computed per factor and multiplied.
    """
    if len(fams) != ps.arity:
        raise StageMismatch("one family per factor required")
    if Ks is None:
        Ks = [None] * ps.arity
    value = Fraction(1)
    for i in range(ps.arity):
        rep = estimate_alpha(ps.factors[i], fams[i], n_range, K=Ks[i], guard=guard)
        value *= rep.exact
    times = sorted(set(int(n) for n in n_range))
    return EstimateReport(
        quantity="alpha",
        value=float(value),
        exact=value,
        scan=f"times {times[0]}..{times[-1]} ({len(times)}), {ps.arity} factors",
        family="; ".join(f.describe() for f in fams),
    )


def rigidity_mass(
    c: Construction,
    j: int,
    time: int | None = None,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> Fraction:
    """Normalized mass returning to its own level at the given time.

    Defaults to the stage height, the natural rigidity candidate; the square
    of this mass is the diagonal coverage of the corresponding tensor square.
    """
    if time is None:
        time = c.heights[j]
    counts, unit, _ = pair_count_matrix(c, j, time, K=K, guard=guard)
    return Fraction(int(np.trace(counts))) * unit / c.total_mass
