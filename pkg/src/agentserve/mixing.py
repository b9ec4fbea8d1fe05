"""Bit-exact 64-bit mixing primitives shared by every deterministic component.

Everything observable in this engine (logits, sampling draws, workload
scripts) derives from the functions in this module, so their definitions are
frozen. Any reimplementation (the compiled kernel, other languages) must
reproduce them bit for bit; ``docs/determinism.md`` carries the normative
description.

All arithmetic is modulo 2**64. The avalanche step is the finalizer of the
splitmix64 generator:

    z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9
    z ^= z >> 27;  z *= 0x94D049BB133111EB
    z ^= z >> 31

Derived primitives:

* ``stream_u64(state, i)``   -> ``avalanche64(state + (i + 1) * GOLDEN)``
* ``unit_float(u)``          -> ``(u >> 11) * 2.0**-53``, a float in [0, 1)
* ``fold_token(h, t)``       -> ``avalanche64(h ^ (t + 1))``
* ``hash_tokens(seq)``       -> left fold of ``fold_token`` from EMPTY_HASH
* ``mix2(a, b)``             -> ``avalanche64(avalanche64(a) ^ b)``
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

GOLDEN = 0x9E3779B97F4A7C15
_MULT1 = 0xBF58476D1CE4E5B9
_MULT2 = 0x94D049BB133111EB

#: Initial accumulator for token-sequence hashing (arbitrary, frozen).
EMPTY_HASH = 0xA0761D6478BD642F
#: Decorrelates the peak-index draw from the per-vocab value stream.
PEAK_SALT = 0x8BB84B93962EACC9
#: Domain separation for request sampling streams.
SAMPLER_SALT = 0x2545F4914F6CDD1D
#: Domain separation for hash-derived evaluator scores.
SCORE_SALT = 0x6A09E667F3BCC909


def avalanche64(z: int) -> int:
    """splitmix64 finalizer: a bijective avalanche on 64-bit integers."""
    z &= MASK64
    z ^= z >> 30
    z = (z * _MULT1) & MASK64
    z ^= z >> 27
    z = (z * _MULT2) & MASK64
    return z ^ (z >> 31)


def stream_u64(state: int, index: int) -> int:
    """The ``index``-th 64-bit value of the stream rooted at ``state``."""
    return avalanche64((state + (index + 1) * GOLDEN) & MASK64)


def unit_float(u: int) -> float:
    """Map a 64-bit value to a float in [0, 1) using the top 53 bits."""
    return (u >> 11) * 2.0**-53


def fold_token(h: int, token: int) -> int:
    """Extend a rolling token-sequence hash by one token."""
    return avalanche64(h ^ ((token + 1) & MASK64))


def hash_tokens(tokens, start: int = EMPTY_HASH) -> int:
    """Rolling hash of a token sequence (order-sensitive, incremental)."""
    h = start
    for t in tokens:
        h = avalanche64(h ^ ((t + 1) & MASK64))
    return h


def mix2(a: int, b: int) -> int:
    """Combine two 64-bit values into one well-mixed value."""
    return avalanche64(avalanche64(a) ^ (b & MASK64))


class RngStream:
    """Counter-based deterministic stream of floats in [0, 1).

    Each request owns exactly one stream; a draw consumes exactly one
    counter position, so two runs that perform the same draws in the same
    order observe identical values regardless of what happens in between.
    """

    __slots__ = ("_state", "position")

    def __init__(self, seed: int):
        self._state = avalanche64((seed ^ SAMPLER_SALT) & MASK64)
        self.position = 0

    def next_float(self) -> float:
        u = stream_u64(self._state, self.position)
        self.position += 1
        return unit_float(u)

    def fork(self, label: int) -> "RngStream":
        """Independent child stream; used to derive per-item seeds."""
        child = RngStream.__new__(RngStream)
        child._state = mix2(self._state, label)
        child.position = 0
        return child
