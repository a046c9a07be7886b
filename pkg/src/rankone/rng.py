"""Deterministic counter-based random draws.

Spacer draws are keyed by (seed, stage, column), so a value never depends on
how many draws happened before it: plans can be expanded lazily, in parallel,
or stage by stage and always produce the same sequence.  The generator hashes
the key with BLAKE2b and rejection-samples 64-bit words, which keeps draws
exactly uniform on {0, ..., bound} and identical across platforms.
"""

import hashlib

_MASK64 = (1 << 64) - 1


def _word(seed: int, stage: int, column: int, counter: int) -> int:
    key = b"%d:%d:%d:%d" % (seed & _MASK64, stage, column, counter)
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "big")


def uniform_int(seed: int, stage: int, column: int, bound: int) -> int:
    """Uniform draw from {0, ..., bound}, deterministic in its key."""
    if bound < 0:
        raise ValueError("bound must be nonnegative")
    span = bound + 1
    limit = ((1 << 64) // span) * span
    counter = 0
    while True:
        w = _word(seed, stage, column, counter)
        if w < limit:
            return w % span
        counter += 1
