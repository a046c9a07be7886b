"""Finite-stage Markov matrices and weak-limit expansion fitting.

The stage-``j`` algebra is spanned by the tower levels, all of equal mass, so
a Markov operator restricted to it is a column-substochastic matrix

    M[a][b] ~= mu(level_a cap T^n level_b) / mu(level_b)

with a per-column residual recording mass that T^n sends onto spacers (outside
the stage-``j`` algebra).  Entries are exact rationals derived from pair
counts; a float mirror is kept for the fitter.

``nnls_decompose`` expresses a matrix over the dictionary {I, Theta, T^z} as a
nonnegative combination with total weight at most one, the finite-stage
counterpart of a weak-limit expansion with a nonnegative unexplained part.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .construction import Construction
from .errors import BudgetExceeded, FitDiverged, StageMismatch
from .symbolic import (
    DEFAULT_MATERIALIZE_GUARD,
    choose_stage,
    pair_count_matrix,
    spacer_hit_counts,
)

DEFAULT_ENTRY_BUDGET = 1 << 18
FIT_TOLERANCE = 1e-9
FIT_ITERATION_CAP = 10_000


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Column-substochastic matrix on the stage-``j`` levels.

    ``residual[b]`` is measured mass of level ``b`` sent outside the level
    algebra; column sums plus residual fall short of 1 only by edge effects,
    which ``error_bound`` dominates entrywise.
    """

    stage: int
    time: int | None
    entries: np.ndarray  # object array of Fraction, shape (h, h)
    residual: tuple[Fraction, ...]
    error_bound: Fraction

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    def as_float(self) -> np.ndarray:
        return self.entries.astype(np.float64)

    def column_sums(self) -> list[Fraction]:
        return [sum(self.entries[:, b]) for b in range(self.size)]


def _exact_matrix(stage, time, counts, denominator, residual_counts, error_bound):
    h = counts.shape[0]
    entries = np.empty((h, h), dtype=object)
    for a in range(h):
        for b in range(h):
            entries[a, b] = Fraction(int(counts[a, b]), denominator)
    residual = tuple(Fraction(int(residual_counts[b]), denominator) for b in range(h))
    return CorrelationMatrix(stage, time, entries, residual, error_bound)


def markov_matrix(
    c: Construction,
    j: int,
    n: int,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
    entry_budget: int = DEFAULT_ENTRY_BUDGET,
) -> CorrelationMatrix:
    """Matrix of T^n on the stage-``j`` levels, assembled from one name pass."""
    h = c.heights[j]
    if h * h > entry_budget:
        raise BudgetExceeded(f"{h}x{h} matrix exceeds entry budget {entry_budget}")
    if K is None:
        K = choose_stage(c, j, n)
    counts, unit, error_mass = pair_count_matrix(c, j, n, K=K, guard=guard)
    residual_counts = spacer_hit_counts(c, j, n, K, guard=guard)
    denominator = 1
    for m in range(j, K):
        denominator *= c.cut_count(m)
    error = error_mass / c.level_measure(j)
    return _exact_matrix(j, n, counts, denominator, residual_counts, error)


def identity_matrix(c: Construction, j: int) -> CorrelationMatrix:
    h = c.heights[j]
    entries = np.empty((h, h), dtype=object)
    zero, one = Fraction(0), Fraction(1)
    for a in range(h):
        for b in range(h):
            entries[a, b] = one if a == b else zero
    return CorrelationMatrix(j, 0, entries, tuple([zero] * h), Fraction(0))


def theta_matrix(c: Construction, j: int) -> CorrelationMatrix:
    """Projection onto constants: every entry is level mass over tower mass."""
    h = c.heights[j]
    w = Fraction(1, h)
    entries = np.empty((h, h), dtype=object)
    entries[:, :] = w
    return CorrelationMatrix(j, None, entries, tuple([Fraction(0)] * h), Fraction(0))


def dictionary(
    c: Construction,
    j: int,
    Z: int,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> list[tuple[str, CorrelationMatrix]]:
    """Labeled fit dictionary: I, Theta, then T^z for z = -Z..Z.

    Order fixes the tie-break: earlier members are preferred by the fitter.
    """
    out = [("I", identity_matrix(c, j)), ("Theta", theta_matrix(c, j))]
    for z in range(-Z, Z + 1):
        out.append((f"T^{z}", markov_matrix(c, j, z, K=K, guard=guard)))
    return out


@dataclass(frozen=True)
class WeakLimitReport:
    """Nonnegative expansion of one matrix over a fit dictionary."""

    time: int | None
    coefficients: dict
    residual_norm: float

    def coefficient(self, label: str) -> float:
        return self.coefficients.get(label, 0.0)

    @property
    def identity_coefficient(self) -> float:
        return self.coefficient("I")

    @property
    def theta_coefficient(self) -> float:
        return self.coefficient("Theta")

    @property
    def total_weight(self) -> float:
        return float(sum(self.coefficients.values()))


def _active_set_nnls(A: np.ndarray, b: np.ndarray, tol: float, cap: int) -> np.ndarray:
    """Lawson-Hanson active-set NNLS; ties go to the lowest column index.

    Reference: Lawson & Hanson, Solving Least Squares Problems, ch. 23.
    """
    m = A.shape[1]
    x = np.zeros(m)
    passive = np.zeros(m, dtype=bool)
    AtA = A.T @ A
    Atb = A.T @ b
    gate = tol * max(1.0, float(np.abs(Atb).max(initial=0.0)))
    iterations = 0
    while True:
        w = Atb - AtA @ x
        w = np.where(passive, -np.inf, w)
        best = int(np.argmax(w))
        if not np.isfinite(w[best]) or w[best] <= gate:
            return x
        passive[best] = True
        while True:
            iterations += 1
            if iterations > cap:
                raise FitDiverged(f"active-set NNLS exceeded {cap} iterations")
            idx = np.flatnonzero(passive)
            sol, *_ = np.linalg.lstsq(A[:, idx], b, rcond=None)
            z = np.zeros(m)
            z[idx] = sol
            if (z[idx] > 0.0).all():
                x = z
                break
            bad = idx[z[idx] <= 0.0]
            alpha = float(np.min(x[bad] / (x[bad] - z[bad])))
            x = x + alpha * (z - x)
            x[x < 1e-15] = 0.0
            passive = x > 0.0


def nnls_decompose(
    M: CorrelationMatrix,
    members: Sequence[tuple[str, CorrelationMatrix]],
    tol: float = FIT_TOLERANCE,
    cap: int = FIT_ITERATION_CAP,
) -> WeakLimitReport:
    """Best nonnegative combination of dictionary members, total weight <= 1.

    Entrywise least squares on the stage algebra (level masses are equal, so
    plain Frobenius).  Deterministic: zero start, lowest-index tie-break.  If
    the unconstrained cone optimum exceeds total weight one, the weight-one
    face is enforced with a heavily weighted augmented row.
    """
    if not members:
        raise StageMismatch("dictionary must be nonempty")
    if any(d.stage != M.stage for _, d in members):
        raise StageMismatch("dictionary members must share the matrix stage")
    A = np.column_stack([d.as_float().ravel() for _, d in members])
    b = M.as_float().ravel()
    x = _active_set_nnls(A, b, tol, cap)
    if x.sum() > 1.0 + 1e-9:
        gamma = 1e6 * max(1.0, float(np.abs(A).max()))
        A2 = np.vstack([A, np.full((1, A.shape[1]), gamma)])
        b2 = np.append(b, gamma)
        x = _active_set_nnls(A2, b2, tol, cap)
        total = x.sum()
        if total > 1.0:
            x = x / total
    coeffs = {label: float(x[i]) for i, (label, _) in enumerate(members)}
    residual = float(np.linalg.norm(b - A @ x))
    return WeakLimitReport(time=M.time, coefficients=coeffs, residual_norm=residual)


@dataclass(frozen=True)
class WeakLimitScan:
    """Per-time fit reports plus the scan's headline candidates."""

    reports: tuple[WeakLimitReport, ...]
    rigidity_candidate: int | None
    min_theta_coefficient: float

    @property
    def max_identity_coefficient(self) -> float:
        return max((r.identity_coefficient for r in self.reports), default=0.0)


def weak_limit_scan(
    c: Construction,
    j: int,
    times: Iterable[int],
    Z: int = 1,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> WeakLimitScan:
    """Fit T^n over the dictionary for each scanned time.

    Returns the argmax-identity time (rigidity candidate) and the minimal
    Theta coefficient over the scan (mixing-floor candidate).
    """
    times = sorted(set(int(t) for t in times))
    members = dictionary(c, j, Z, K=K, guard=guard)
    reports = []
    for t in times:
        M = markov_matrix(c, j, t, K=K, guard=guard)
        reports.append(nnls_decompose(M, members))
    best_t = None
    best = -1.0
    min_theta = float("inf")
    for t, rep in zip(times, reports):
        if rep.identity_coefficient > best:
            best = rep.identity_coefficient
            best_t = t
        min_theta = min(min_theta, rep.theta_coefficient)
    if not reports:
        min_theta = 0.0
    return WeakLimitScan(tuple(reports), best_t, min_theta)


def adjoint(M: CorrelationMatrix) -> CorrelationMatrix:
    """Adjoint on the stage algebra: measure-reweighted transpose.

    Levels at one stage share the same mass, so this is the plain transpose;
    the residual is re-derived from the transposed column sums.
    """
    entries = M.entries.T.copy()
    one = Fraction(1)
    residual = tuple(
        max(Fraction(0), one - sum(entries[:, b])) for b in range(M.size)
    )
    time = None if M.time is None else -M.time
    return CorrelationMatrix(M.stage, time, entries, residual, M.error_bound)


def compose(M: CorrelationMatrix, N: CorrelationMatrix) -> CorrelationMatrix:
    """Exact matrix product M N with pessimistic residual propagation."""
    if M.stage != N.stage:
        raise StageMismatch(f"stage {M.stage} != {N.stage}")
    entries = M.entries @ N.entries
    one = Fraction(1)
    residual = []
    for b in range(N.size):
        leaked = N.residual[b] + sum(
            M.residual[k] * N.entries[k, b] for k in range(N.size)
        )
        residual.append(min(one, leaked))
    time = None
    if M.time is not None and N.time is not None:
        time = M.time + N.time
    return CorrelationMatrix(
        M.stage, time, entries, tuple(residual), M.error_bound + N.error_bound
    )
