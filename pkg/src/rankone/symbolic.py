"""Tower names and correlation counting.

The name of tower ``K`` read over the levels of tower ``j`` is a word of
length ``h_K`` over the alphabet {level 0, ..., level ``h_j - 1``, spacer}:
stage ``j`` reads as the identity word, and each stacking step concatenates
one copy of the previous word per column followed by that column's spacers.
Spacers are encoded as ``-1`` in integer arrays.

Correlations mu(A cap T^n B) are computed by counting aligned symbol pairs in
a name.  The count is exact for the mass it sees; what it cannot see (orbits
crossing the top of the working tower) is covered by an explicit error bound,
so the reported value is always a lower bound and ``value + error_bound`` an
upper bound for the true correlation.

Three routes to the same count are provided and cross-checked in tests:
materialized counting, a boundary-window recursion that never materializes
large names, and an orbit oracle driven by a top-down position decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .construction import Construction
from .errors import BudgetExceeded, ShiftTooLarge, StageMismatch, WindowTooSmall

SPACER = -1

DEFAULT_MATERIALIZE_GUARD = 2_000_000
DEFAULT_WINDOW = 1 << 16


@dataclass(frozen=True)
class LevelSet:
    """A union of levels of the stage-``j`` tower."""

    stage: int
    indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(set(int(i) for i in self.indices)))
        object.__setattr__(self, "indices", idx)
        if idx and idx[0] < 0:
            raise ValueError("level indices must be nonnegative")

    @staticmethod
    def single(stage: int, index: int) -> "LevelSet":
        return LevelSet(stage, (index,))

    @staticmethod
    def full(c: Construction, stage: int) -> "LevelSet":
        return LevelSet(stage, tuple(range(c.heights[stage])))

    def validate(self, c: Construction) -> None:
        h = c.heights[self.stage]
        if self.indices and self.indices[-1] >= h:
            raise ValueError(f"level index {self.indices[-1]} >= height {h}")

    def measure(self, c: Construction) -> Fraction:
        """Unnormalized mass: |indices| * mu(B_stage)."""
        return len(self.indices) * c.level_measure(self.stage)

    def normalized_measure(self, c: Construction) -> Fraction:
        return self.measure(c) / c.total_mass

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class CorrelationValue:
    """Measured correlation with its soundness bound.

    The true value lies in ``[value, value + error_bound]``.
    """

    value: Fraction
    error_bound: Fraction
    count: int
    stage_used: int


@dataclass(frozen=True, eq=False)
class TowerName:
    """Name of tower ``top_stage`` over stage-``base_stage`` levels.

    Either fully materialized (``symbols`` is set) or a lazy handle carrying
    per-stage prefix/suffix windows of width at most ``window``.
    """

    base_stage: int
    top_stage: int
    length: int
    window: int
    symbols: np.ndarray | None
    edges: dict[int, tuple[np.ndarray, np.ndarray]]

    @property
    def is_materialized(self) -> bool:
        return self.symbols is not None

    def materialized(self) -> np.ndarray:
        if self.symbols is None:
            raise BudgetExceeded(
                f"name of length {self.length} exceeds the materialization guard"
            )
        return self.symbols

    def prefix(self, stage: int | None = None) -> np.ndarray:
        stage = self.top_stage if stage is None else stage
        if self.symbols is not None and stage == self.top_stage:
            return self.symbols[: self.window]
        return self.edges[stage][0]

    def suffix(self, stage: int | None = None) -> np.ndarray:
        stage = self.top_stage if stage is None else stage
        if self.symbols is not None and stage == self.top_stage:
            return self.symbols[-self.window :]
        return self.edges[stage][1]


# ---------------------------------------------------------------------------
# Name materialization and membership
# ---------------------------------------------------------------------------


def _check_stages(c: Construction, j: int, K: int) -> None:
    if not 0 <= j <= K <= c.max_stage:
        raise StageMismatch(f"need 0 <= {j} <= {K} <= {c.max_stage}")


def materialized_name(
    c: Construction, j: int, K: int, guard: int = DEFAULT_MATERIALIZE_GUARD
) -> np.ndarray:
    """The full name array (int32, spacer = -1), cached per (j, K)."""
    _check_stages(c, j, K)
    if c.heights[K] > guard:
        raise BudgetExceeded(f"height {c.heights[K]} exceeds materialization guard {guard}")
    key = ("name", j, K)
    cached = c._cache.get(key)
    if cached is not None:
        return cached
    # reuse the highest cached intermediate stage
    m = K
    while m > j and ("name", j, m) not in c._cache:
        m -= 1
    word = c._cache.get(("name", j, m))
    if word is None:
        word = np.arange(c.heights[j], dtype=np.int32)
        word.setflags(write=False)
        c._cache[("name", j, j)] = word
    for stage in range(m, K):
        spacers = c.spacers[stage]
        parts = []
        for col in range(c.cut_count(stage)):
            parts.append(word)
            s = int(spacers[col])
            if s:
                parts.append(np.full(s, SPACER, dtype=np.int32))
        word = np.concatenate(parts)
        word.setflags(write=False)
        c._cache[("name", j, stage + 1)] = word
    assert len(word) == c.heights[K]
    return word


def _membership(word: np.ndarray, levels: LevelSet, h_base: int) -> np.ndarray:
    lut = np.zeros(h_base, dtype=bool)
    if levels.indices:
        lut[np.asarray(levels.indices, dtype=np.int64)] = True
    out = np.zeros(word.shape, dtype=bool)
    valid = word >= 0
    out[valid] = lut[word[valid]]
    return out


def _edge_windows(c: Construction, j: int, K: int, width: int) -> dict:
    """Per-stage (prefix, suffix) symbol windows of width <= ``width``."""
    edges = {}
    pre = np.arange(min(width, c.heights[j]), dtype=np.int32)
    suf = np.arange(max(0, c.heights[j] - width), c.heights[j], dtype=np.int32)
    edges[j] = (pre, suf)
    for m in range(j, K):
        h = c.heights[m]
        spacers = c.spacers[m]
        r = c.cut_count(m)
        parts, need, col = [], width, 0
        while need > 0 and col < r:
            take = min(need, h)
            parts.append(pre[:take])
            need -= take
            if need > 0:
                k = min(need, int(spacers[col]))
                if k:
                    parts.append(np.full(k, SPACER, dtype=np.int32))
                    need -= k
            col += 1
        pre = np.concatenate(parts) if parts else pre[:0]
        parts, need, col = [], width, r - 1
        while need > 0 and col >= 0:
            k = min(need, int(spacers[col]))
            if k:
                parts.append(np.full(k, SPACER, dtype=np.int32))
                need -= k
            if need > 0:
                take = min(need, h)
                parts.append(suf[len(suf) - take :])
                need -= take
            col -= 1
        suf = np.concatenate(list(reversed(parts))) if parts else suf[:0]
        edges[m + 1] = (pre, suf)
    return edges


def tower_name(
    c: Construction,
    j: int,
    K: int,
    window: int = DEFAULT_WINDOW,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> TowerName:
    """Name of tower ``K`` over stage-``j`` levels; lazy above the guard."""
    _check_stages(c, j, K)
    length = c.heights[K]
    width = min(window, length)
    edges = _edge_windows(c, j, K, width)
    if length <= guard:
        return TowerName(j, K, length, width, materialized_name(c, j, K, guard), edges)
    return TowerName(j, K, length, width, None, edges)


# ---------------------------------------------------------------------------
# Correlation counting
# ---------------------------------------------------------------------------


def choose_stage(c: Construction, j: int, n: int) -> int:
    """Default working-stage policy: tall enough to make the bound small."""
    target = max(64 * abs(n), 16 * c.heights[j], 1)
    for K in range(j, c.max_stage + 1):
        if c.heights[K] >= target:
            return K
    return c.max_stage


def _count_materialized(
    c: Construction, A: LevelSet, B: LevelSet, n: int, K: int, guard: int
) -> int:
    word = materialized_name(c, A.stage, K, guard)
    h_base = c.heights[A.stage]
    in_a = _membership(word, A, h_base)
    in_b = _membership(word, B, h_base)
    if n >= 0:
        if n == 0:
            return int(np.count_nonzero(in_a & in_b))
        return int(np.count_nonzero(in_b[:-n] & in_a[n:]))
    m = -n
    return int(np.count_nonzero(in_b[m:] & in_a[: len(word) - m]))


def _window_bools(window: np.ndarray, levels: LevelSet, h_base: int) -> np.ndarray:
    lut = np.zeros(h_base, dtype=bool)
    if levels.indices:
        lut[np.asarray(levels.indices, dtype=np.int64)] = True
    out = np.zeros(window.shape, dtype=bool)
    valid = window >= 0
    out[valid] = lut[window[valid]]
    return out


def _count_tail_head(
    c: Construction,
    tail: LevelSet,
    head: LevelSet,
    n: int,
    K: int,
    guard: int,
) -> int:
    """#{i : word[i] in tail and word[i + n] in head} for n >= 0, by recursion."""
    j = tail.stage
    if n == 0:
        common = len(set(tail.indices) & set(head.indices))
        prod = 1
        for m in range(j, K):
            prod *= c.cut_count(m)
        return common * prod
    m0 = j
    while c.heights[m0] < n:
        m0 += 1
    h0 = c.heights[m0]
    head_lut = set(head.indices)
    if m0 == j:
        count = sum(1 for i in tail.indices if 0 <= i + n < c.heights[j] and i + n in head_lut)
        word0 = np.arange(c.heights[j], dtype=np.int32)
    else:
        word0 = materialized_name(c, j, m0, guard)
        in_tail = _membership(word0, tail, c.heights[j])
        in_head = _membership(word0, head, c.heights[j])
        count = int(np.count_nonzero(in_tail[:-n] & in_head[n:]))
    suffix_tail = _window_bools(word0[h0 - n :], tail, c.heights[j])
    prefix_head = _window_bools(word0[:n], head, c.heights[j])
    for m in range(m0, K):
        spacers = c.spacers[m]
        r = c.cut_count(m)
        cross = 0
        gaps, mult = np.unique(np.asarray(spacers[: r - 1]), return_counts=True)
        for g, times in zip(gaps, mult):
            t = n - int(g)
            if t > 0:
                pairs = int(np.count_nonzero(suffix_tail[n - t :] & prefix_head[:t]))
                cross += int(times) * pairs
        count = r * count + cross
        g_last = int(spacers[r - 1])
        if g_last >= n:
            suffix_tail = np.zeros(n, dtype=bool)
        elif g_last > 0:
            suffix_tail = np.concatenate(
                [suffix_tail[g_last:], np.zeros(g_last, dtype=bool)]
            )
    return count


def recursive_pair_count(
    c: Construction,
    A: LevelSet,
    B: LevelSet,
    n: int,
    K: int,
    window: int = DEFAULT_WINDOW,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> int:
    """Pair count via boundary windows; exact for the name it describes.

    Matches materialized counting whenever the latter is feasible; the base
    stage is the first whose height reaches ``|n|``, so only that stage's
    name is ever materialized.
    """
    if A.stage != B.stage:
        raise StageMismatch("A and B must live at the same stage")
    _check_stages(c, A.stage, K)
    if abs(n) > window:
        raise WindowTooSmall(f"|n|={abs(n)} exceeds window {window}")
    if abs(n) >= c.heights[K]:
        raise ShiftTooLarge(f"|n|={abs(n)} >= height {c.heights[K]}")
    if n >= 0:
        return _count_tail_head(c, B, A, n, K, guard)
    return _count_tail_head(c, A, B, -n, K, guard)


def correlation(
    c: Construction,
    A: LevelSet,
    B: LevelSet,
    n: int,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
    window: int = DEFAULT_WINDOW,
) -> CorrelationValue:
    """Measured mu(A cap T^n B) with a soundness bound.

    ``value`` counts aligned pairs in the stage-``K`` name weighted by the
    stage-``K`` level mass; ``error_bound`` covers the top-of-tower wrap and
    the mass not yet covered at stage ``K``.
    """
    if A.stage != B.stage:
        raise StageMismatch("A and B must live at the same stage")
    j = A.stage
    if K is None:
        K = choose_stage(c, j, n)
    _check_stages(c, j, K)
    A.validate(c)
    B.validate(c)
    if abs(n) >= c.heights[K]:
        raise ShiftTooLarge(f"|n|={abs(n)} >= height {c.heights[K]} at stage {K}")
    cache_key = ("corr", j, A.indices, B.indices, n, K)
    count = c._cache.get(cache_key)
    if count is None:
        if c.heights[K] <= guard:
            count = _count_materialized(c, A, B, n, K, guard)
        else:
            count = recursive_pair_count(c, A, B, n, K, window=window, guard=guard)
        c._cache[cache_key] = count
    unit = c.level_measure(K)
    value = count * unit
    error = (abs(n) + 1) * unit + (c.total_mass - c.tower_masses[K])
    return CorrelationValue(value=value, error_bound=error, count=count, stage_used=K)


# ---------------------------------------------------------------------------
# Orbit oracle
# ---------------------------------------------------------------------------


def descent_map(
    c: Construction, j: int, K: int, guard: int = DEFAULT_MATERIALIZE_GUARD
) -> np.ndarray:
    """Stage-``j`` level of every stage-``K`` position, by top-down descent.

    Independent of name concatenation: each position is located inside its
    column block stage by stage using block-boundary arithmetic.
    """
    _check_stages(c, j, K)
    h_top = c.heights[K]
    if h_top > guard:
        raise BudgetExceeded(f"height {h_top} exceeds materialization guard {guard}")
    key = ("descent", j, K)
    cached = c._cache.get(key)
    if cached is not None:
        return cached
    pos = np.arange(h_top, dtype=np.int64)
    out = np.empty(h_top, dtype=np.int32)
    alive = np.ones(h_top, dtype=bool)
    for m in range(K - 1, j - 1, -1):
        h = c.heights[m]
        lengths = h + c.spacers[m]
        ends = np.cumsum(lengths)
        starts = ends - lengths
        block = np.searchsorted(ends, pos, side="right")
        offset = pos - starts[block]
        is_spacer = alive & (offset >= h)
        out[is_spacer] = SPACER
        alive &= ~is_spacer
        pos = np.where(alive, offset, 0)
    out[alive] = pos[alive].astype(np.int32)
    out.setflags(write=False)
    c._cache[key] = out
    return out


def orbit_oracle_correlation(
    c: Construction,
    A: LevelSet,
    B: LevelSet,
    n: int,
    K: int,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> Fraction:
    """Validation oracle: simulate T as index+1 on the stage-``K`` levels.

    A point at level ``i`` is in ``T^n B`` iff ``i - n`` is a ``B`` position;
    orbits leaving the tower are dropped, exactly as in ``correlation``.
    Must agree with ``correlation(...).value`` bit for bit.
    """
    if A.stage != B.stage:
        raise StageMismatch("A and B must live at the same stage")
    if abs(n) >= c.heights[K]:
        raise ShiftTooLarge(f"|n|={abs(n)} >= height {c.heights[K]}")
    level = descent_map(c, A.stage, K, guard)
    h_top = c.heights[K]
    h_base = c.heights[A.stage]
    in_a = _membership(level, A, h_base)
    in_b = _membership(level, B, h_base)
    pos = np.flatnonzero(in_b)
    dst = pos + n
    dst = dst[(dst >= 0) & (dst < h_top)]
    matched = int(np.count_nonzero(in_a[dst])) if len(dst) else 0
    return Fraction(matched) * c.level_measure(K)


def pair_count_matrix(
    c: Construction,
    j: int,
    n: int,
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> tuple[np.ndarray, Fraction, Fraction]:
    """Aligned-pair counts between all stage-``j`` level pairs at shift ``n``.

    ``counts[a, b]`` counts positions carrying level ``b`` whose shift-``n``
    image carries level ``a``; one name pass serves every level pair.
    Returns (counts, stage-``K`` level mass, per-pair error bound).
    """
    if K is None:
        K = choose_stage(c, j, n)
    _check_stages(c, j, K)
    if abs(n) >= c.heights[K]:
        raise ShiftTooLarge(f"|n|={abs(n)} >= height {c.heights[K]}")
    h = c.heights[j]
    key = ("paircounts", j, n, K)
    counts = c._cache.get(key)
    if counts is None:
        if c.heights[K] <= guard:
            word = materialized_name(c, j, K, guard)
            if n >= 0:
                src = word[: len(word) - n] if n else word
                dst = word[n:] if n else word
            else:
                src = word[-n:]
                dst = word[: len(word) + n]
            both = (src >= 0) & (dst >= 0)
            codes = dst[both].astype(np.int64) * h + src[both].astype(np.int64)
            counts = np.bincount(codes, minlength=h * h).reshape(h, h)
        else:
            # beyond the guard: one boundary-window recursion per level pair
            if h * h > 4096:
                raise BudgetExceeded(
                    f"{h}x{h} pair matrix via recursion exceeds the pair budget"
                )
            counts = np.zeros((h, h), dtype=np.int64)
            for a in range(h):
                A1 = LevelSet.single(j, a)
                for b in range(h):
                    counts[a, b] = recursive_pair_count(
                        c, A1, LevelSet.single(j, b), n, K, guard=guard
                    )
        counts.setflags(write=False)
        c._cache[key] = counts
    unit = c.level_measure(K)
    error = (abs(n) + 1) * unit + (c.total_mass - c.tower_masses[K])
    return counts, unit, error


def spacer_hit_counts(
    c: Construction,
    j: int,
    n: int,
    K: int,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> np.ndarray:
    """Per-level counts of positions whose shift-``n`` image is a spacer."""
    h = c.heights[j]
    key = ("spacerhits", j, n, K)
    hits = c._cache.get(key)
    if hits is None:
        word = materialized_name(c, j, K, guard)
        if n >= 0:
            src = word[: len(word) - n] if n else word
            dst = word[n:] if n else word
        else:
            src = word[-n:]
            dst = word[: len(word) + n]
        into_spacer = (src >= 0) & (dst == SPACER)
        hits = np.bincount(src[into_spacer], minlength=h)
        hits.setflags(write=False)
        c._cache[key] = hits
    return hits


def scan_correlations(
    c: Construction,
    A: LevelSet,
    B: LevelSet,
    times: Iterable[int],
    K: int | None = None,
    guard: int = DEFAULT_MATERIALIZE_GUARD,
) -> list[tuple[int, CorrelationValue]]:
    """Correlation at each time, sorted by time (CSV-friendly)."""
    out = []
    for n in sorted(set(int(t) for t in times)):
        out.append((n, correlation(c, A, B, n, K=K, guard=guard)))
    return out
