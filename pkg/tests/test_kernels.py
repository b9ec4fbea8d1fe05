from __future__ import annotations

import numpy as np
import pytest

from agentserve import kernels
from agentserve.mixing import (
    GOLDEN,
    MASK64,
    PEAK_SALT,
    avalanche64,
    unit_float,
)


def scalar_fill(state: int, vocab: int, concentration: float, logit_range: float):
    """Independent scalar reference for the vectorized kernels."""
    out = np.empty(vocab, dtype=np.float32)
    for v in range(vocab):
        u = avalanche64((state + (v + 1) * GOLDEN) & MASK64)
        out[v] = np.float32((2.0 * unit_float(u) - 1.0) * logit_range)
    peak = avalanche64(state ^ PEAK_SALT) % vocab
    out[peak] = np.float32(out[peak] + np.float32(concentration * logit_range))
    return out


@pytest.mark.parametrize("vocab", [2, 7, 256, 1000])
def test_numpy_backend_matches_scalar_reference(vocab):
    for state in (0, 1, 0xDEADBEEF, MASK64):
        a = kernels.fill_logits_numpy(state, vocab, 2.0, 5.0)
        b = scalar_fill(state, vocab, 2.0, 5.0)
        assert np.array_equal(a, b)


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="extension not built")
@pytest.mark.parametrize("vocab", [2, 7, 256, 1000])
def test_compiled_backend_bit_identical_to_numpy(vocab):
    for state in (0, 3, 0xC0FFEE, MASK64 - 1):
        for conc, rng in ((0.0, 5.0), (2.5, 5.0), (1.0, 0.25)):
            a = kernels.fill_logits_numpy(state, vocab, conc, rng)
            b = kernels.fill_logits_compiled(state, vocab, conc, rng)
            assert np.array_equal(a, b)


def test_output_dtype_and_range():
    out = kernels.fill_logits(42, 256, 0.0, 5.0)
    assert out.dtype == np.float32
    assert np.all(np.abs(out) <= 5.0)
    assert np.all(np.isfinite(out))


def test_peak_boost_applied_once():
    plain = kernels.fill_logits(42, 64, 0.0, 5.0)
    boosted = kernels.fill_logits(42, 64, 2.0, 5.0)
    diff = boosted - plain
    changed = np.nonzero(diff)[0]
    assert len(changed) == 1
    assert diff[changed[0]] == np.float32(np.float32(plain[changed[0]]) + np.float32(10.0)) - plain[changed[0]]
