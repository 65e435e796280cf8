"""Counter-based random numbers for reproducible parallel path simulation.

Every draw is a pure function of ``(key, counter)`` through Philox4x32-10, so
a path's noise does not depend on which worker simulates it or in which
order.  Counter layout used throughout the package::

    c0 = block index within the stream
    c1 = purpose tag (PURPOSE_NORMAL, PURPOSE_BRIDGE, ...)
    c2, c3 = low/high 32 bits of the 64-bit stream id (path index)

One block gives four 32-bit words, i.e. two 53-bit uniforms on the open
interval (0, 1).  Normals come from the inverse CDF (Wichura's AS241).
"""

from __future__ import annotations

import numpy as np

from ._accel import njit

PURPOSE_NORMAL = 0
PURPOSE_BRIDGE = 1

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S5 = np.uint64(5)
_S6 = np.uint64(6)
_TWO26 = 67108864.0
_INV53 = 1.0 / 9007199254740992.0


def _philox_words(c0, c1, c2, c3, k0, k1):
    # Works on uint64 scalars (numba) and uint64 arrays (numpy) alike.
    for _ in range(10):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0 = (hi1 ^ c1 ^ k0) & _MASK
        c1 = lo1
        c2 = (hi0 ^ c3 ^ k1) & _MASK
        c3 = lo0
        k0 = (k0 + _W0) & _MASK
        k1 = (k1 + _W1) & _MASK
    return c0, c1, c2, c3


philox4x32 = _philox_words
philox4x32_jit = njit(inline="always")(_philox_words)


def _words_to_uniforms(w0, w1, w2, w3):
    u0 = ((w0 >> _S5) * _TWO26 + (w1 >> _S6) + 0.5) * _INV53
    u1 = ((w2 >> _S5) * _TWO26 + (w3 >> _S6) + 0.5) * _INV53
    return u0, u1


_words_to_uniforms_jit = njit(inline="always")(_words_to_uniforms)


def split_key(seed: int) -> tuple[np.uint64, np.uint64]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.uint64(seed & 0xFFFFFFFF), np.uint64(seed >> 32)


@njit(inline="always")
def uniform_pair_jit(block, purpose, stream, k0, k1):
    w0, w1, w2, w3 = philox4x32_jit(
        np.uint64(block) & _MASK,
        np.uint64(purpose),
        np.uint64(stream) & _MASK,
        np.uint64(stream) >> _S32,
        k0,
        k1,
    )
    return _words_to_uniforms_jit(w0, w1, w2, w3)


def uniform_pairs(block, purpose, stream, seed):
    """Vectorised counterpart of :func:`uniform_pair_jit`.

    ``block`` and ``stream`` broadcast against each other.
    """
    k0, k1 = split_key(seed)
    block = np.asarray(block, dtype=np.uint64)
    stream = np.asarray(stream, dtype=np.uint64)
    block, stream = np.broadcast_arrays(block, stream)
    w = _philox_words(
        block & _MASK,
        np.full(block.shape, purpose, dtype=np.uint64),
        stream & _MASK,
        stream >> _S32,
        k0,
        k1,
    )
    return _words_to_uniforms(*w)


# Wichura (1988), algorithm AS241 PPND16.
_A = (3.387132872796366608, 133.14166789178437745, 1971.5909503065514427,
      13731.693765509461125, 45921.953931549871457, 67265.770927008700853,
      33430.575583588128105, 2509.0809287301226727)
_B = (1.0, 42.313330701600911252, 687.1870074920579083, 5394.1960214247511077,
      21213.794301586595867, 39307.89580009271061, 28729.085735721942674,
      5226.495278852545925)
_C = (1.42343711074968357734, 4.6303378461565452959, 5.7694972214606914055,
      3.64784832476320460504, 1.27045825245236838258, 0.24178072517745061177,
      0.0227238449892691845833, 7.7454501427834140764e-4)
_D = (1.0, 2.05319162663775882187, 1.6763848301838038494, 0.68976733498510000455,
      0.14810397642748007459, 0.0151986665636164571966, 5.475938084995344946e-4,
      1.05075007164441684324e-9)
_E = (6.6579046435011037772, 5.4637849111641143699, 1.7848265399172913358,
      0.29656057182850489123, 0.026532189526576123093, 0.0012426609473880784386,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 0.59983220655588793769, 0.13692988092273580531, 0.0148753612908506148525,
      7.868691311456132591e-4, 1.8463183175100546818e-5, 1.4215117583164458887e-7,
      2.04426310338993978564e-15)


def _horner(c, r):
    return ((((((c[7] * r + c[6]) * r + c[5]) * r + c[4]) * r + c[3]) * r + c[2]) * r + c[1]) * r + c[0]


_horner_jit = njit(inline="always")(_horner)


@njit(inline="always")
def ndtri_jit(p):
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _horner_jit(_A, r) / _horner_jit(_B, r)
    r = p if q < 0.0 else 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _horner_jit(_C, r) / _horner_jit(_D, r)
    else:
        r -= 5.0
        val = _horner_jit(_E, r) / _horner_jit(_F, r)
    return -val if q < 0.0 else val


def ndtri(p):
    """Inverse standard normal CDF on (0, 1), vectorised."""
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    central = np.abs(q) <= 0.425
    out = np.empty_like(p)
    r = 0.180625 - q[central] ** 2
    out[central] = q[central] * _horner(_A, r) / _horner(_B, r)
    tail = ~central
    if np.any(tail):
        qt = q[tail]
        r = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        r = np.sqrt(-np.log(r))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _horner(_C, rn) / _horner(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _horner(_E, rf) / _horner(_F, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out if out.ndim else out[()]


def normals(index, stream, seed):
    """Standard normals number ``index`` of ``stream``; two per Philox block."""
    index = np.asarray(index, dtype=np.uint64)
    u0, u1 = uniform_pairs(index >> np.uint64(1), PURPOSE_NORMAL, stream, seed)
    return ndtri(np.where((index & np.uint64(1)) == 0, u0, u1))
