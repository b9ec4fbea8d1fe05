"""Logits-fill kernel with compiled and pure-numpy backends.

The compiled extension (``agentserve._mixcore``) is preferred when it built;
setting ``AGENTSERVE_PURE=1`` forces the numpy fallback. Both backends are
bit-identical; ``benchmarks/bench_kernels.py`` compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

from .mixing import GOLDEN, MASK64, PEAK_SALT, avalanche64

_U64_GOLDEN = np.uint64(GOLDEN)
_U64_MULT1 = np.uint64(0xBF58476D1CE4E5B9)
_U64_MULT2 = np.uint64(0x94D049BB133111EB)
_SH30 = np.uint64(30)
_SH27 = np.uint64(27)
_SH31 = np.uint64(31)
_SH11 = np.uint64(11)

_have_ext = False
if os.environ.get("AGENTSERVE_PURE") != "1":
    try:
        from . import _mixcore

        _have_ext = True
    except ImportError:
        _mixcore = None

BACKEND = "compiled" if _have_ext else "numpy"

# Per-vocab-size cache of the stream index vector.
_index_cache: dict[int, np.ndarray] = {}


def _indices(vocab_size: int) -> np.ndarray:
    idx = _index_cache.get(vocab_size)
    if idx is None:
        idx = np.arange(1, vocab_size + 1, dtype=np.uint64) * _U64_GOLDEN
        _index_cache[vocab_size] = idx
    return idx


def fill_logits_numpy(
    state: int, vocab_size: int, concentration: float, logit_range: float
) -> np.ndarray:
    z = np.uint64(state & MASK64) + _indices(vocab_size)
    z ^= z >> _SH30
    z *= _U64_MULT1
    z ^= z >> _SH27
    z *= _U64_MULT2
    z ^= z >> _SH31
    x = (z >> _SH11).astype(np.float64) * 2.0**-53
    out = ((2.0 * x - 1.0) * logit_range).astype(np.float32)
    peak = avalanche64(state ^ PEAK_SALT) % vocab_size
    out[peak] = np.float32(out[peak] + np.float32(concentration * logit_range))
    return out


def fill_logits_compiled(
    state: int, vocab_size: int, concentration: float, logit_range: float
) -> np.ndarray:
    out = np.empty(vocab_size, dtype=np.float32)
    _mixcore.fill_logits(state & MASK64, out, concentration, logit_range)
    return out


fill_logits = fill_logits_compiled if _have_ext else fill_logits_numpy
