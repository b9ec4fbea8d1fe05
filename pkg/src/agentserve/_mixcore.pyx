# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot path: per-vocab logits fill from the 64-bit mix stream.

Must stay bit-identical to the numpy fallback in ``agentserve.kernels`` and
to the scalar reference in ``agentserve.mixing``.
"""

from libc.stdint cimport uint64_t


cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15UL
cdef uint64_t MULT1 = 0xBF58476D1CE4E5B9UL
cdef uint64_t MULT2 = 0x94D049BB133111EBUL
cdef uint64_t PEAK_SALT = 0x8BB84B93962EACC9UL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t _avalanche(uint64_t z) nogil:
    z ^= z >> 30
    z *= MULT1
    z ^= z >> 27
    z *= MULT2
    z ^= z >> 31
    return z


def fill_logits(state, float[::1] out, double concentration, double logit_range):
    """Fill ``out`` with the logits for the stream rooted at ``state``."""
    cdef uint64_t st = <uint64_t> (state & 0xFFFFFFFFFFFFFFFF)
    cdef Py_ssize_t vocab = out.shape[0]
    cdef Py_ssize_t v
    cdef uint64_t u
    cdef double x
    with nogil:
        for v in range(vocab):
            u = _avalanche(st + (<uint64_t> (v + 1)) * GOLDEN)
            x = <double> (u >> 11) * INV_2_53
            out[v] = <float> ((2.0 * x - 1.0) * logit_range)
    cdef Py_ssize_t peak = <Py_ssize_t> (_avalanche(st ^ PEAK_SALT) % (<uint64_t> vocab))
    out[peak] = <float> (out[peak] + <float> (concentration * logit_range))


def avalanche64(value):
    """Scalar avalanche, exposed for parity tests."""
    return _avalanche(<uint64_t> (value & 0xFFFFFFFFFFFFFFFF))
