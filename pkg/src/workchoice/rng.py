"""Portable seeded random streams.

All stochastic parts of the package draw from :class:`Rng`, a
xoshiro256** generator seeded through splitmix64.  The bit stream is fixed
by the algorithm, so a seed reproduces the same draws on every platform.
Derived variates use simple, documented transforms:

* uniform doubles: top 53 bits of the output times 2**-53, in [0, 1)
* normals: Box-Muller, two normals per pair of uniforms within one call
* Poisson: multiplication method below mean 10, PTRS (Hoermann 1993) above
* categorical / permutation: inversion and Fisher-Yates on uniforms
"""

from __future__ import annotations

import math

import numba
import numpy as np

MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 1.0 / 9007199254740992.0


def splitmix64(x: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return x, z ^ (z >> 31)


@numba.njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@numba.njit(cache=True)
def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@numba.njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@numba.njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = np.float64(_next(s) >> np.uint64(11)) * _TWO_POW_M53


@numba.njit(cache=True)
def _uniform(s):
    return np.float64(_next(s) >> np.uint64(11)) * _TWO_POW_M53


@numba.njit(cache=True)
def _fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i < n:
        u1 = 1.0 - _uniform(s)  # (0, 1]
        u2 = _uniform(s)
        r = math.sqrt(-2.0 * math.log(u1))
        out[i] = r * math.cos(2.0 * math.pi * u2)
        if i + 1 < n:
            out[i + 1] = r * math.sin(2.0 * math.pi * u2)
        i += 2


@numba.njit(cache=True)
def _poisson_small(s, mean):
    limit = math.exp(-mean)
    k = 0
    p = _uniform(s)
    while p > limit:
        k += 1
        p *= _uniform(s)
    return k


@numba.njit(cache=True)
def _poisson_ptrs(s, mean):
    slam = math.sqrt(mean)
    loglam = math.log(mean)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = _uniform(s) - 0.5
        v = _uniform(s)
        us = 0.5 - abs(u)
        k = math.floor((2.0 * a / us + b) * u + mean + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        if k < 0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)) <= (
            -mean + k * loglam - math.lgamma(k + 1.0)
        ):
            return np.int64(k)


@numba.njit(cache=True)
def _fill_poisson(s, means, out):
    for i in range(means.shape[0]):
        m = means[i]
        if m <= 0.0:
            out[i] = 0
        elif m < 10.0:
            out[i] = _poisson_small(s, m)
        else:
            out[i] = _poisson_ptrs(s, m)


@numba.njit(cache=True)
def _fill_categorical(s, cdf, out):
    last = cdf.shape[0] - 1
    for i in range(out.shape[0]):
        u = _uniform(s) * cdf[last]
        lo = 0
        hi = last
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] > u:
                hi = mid
            else:
                lo = mid + 1
        out[i] = lo


@numba.njit(cache=True)
def _fill_rows_categorical(s, probs, draws, out):
    # probs: (n, J) rows; out: (n, draws)
    n, J = probs.shape
    cdf = np.empty(J)
    for r in range(n):
        acc = 0.0
        for j in range(J):
            acc += probs[r, j]
            cdf[j] = acc
        for d in range(draws):
            u = _uniform(s) * acc
            lo = 0
            hi = J - 1
            while lo < hi:
                mid = (lo + hi) // 2
                if cdf[mid] > u:
                    hi = mid
                else:
                    lo = mid + 1
            out[r, d] = lo


@numba.njit(cache=True)
def _shuffle(s, arr):
    for i in range(arr.shape[0] - 1, 0, -1):
        j = np.int64(_uniform(s) * (i + 1))
        tmp = arr[i]
        arr[i] = arr[j]
        arr[j] = tmp


class Rng:
    """xoshiro256** stream seeded from a 64-bit integer via splitmix64."""

    def __init__(self, seed: int):
        if not 0 <= int(seed) <= MASK64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        x = int(seed)
        words = []
        for _ in range(4):
            x, z = splitmix64(x)
            words.append(z)
        self._s = np.array(words, dtype=np.uint64)

    @property
    def state(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self._s)

    def next_u64(self) -> int:
        out = np.empty(1, dtype=np.uint64)
        _fill_u64(self._s, out)
        return int(out[0])

    def u64(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.uint64)
        _fill_u64(self._s, out)
        return out

    def split(self) -> "Rng":
        """Independent child stream seeded from this stream's next output."""
        return Rng(self.next_u64())

    def random(self, n: int | None = None):
        if n is None:
            return float(_uniform(self._s))
        out = np.empty(n)
        _fill_uniform(self._s, out)
        return out

    def normal(self, n: int, loc: float = 0.0, scale: float = 1.0) -> np.ndarray:
        out = np.empty(n)
        _fill_normal(self._s, out)
        return loc + scale * out

    def lognormal(self, n: int, mu: float, sigma: float) -> np.ndarray:
        return np.exp(self.normal(n, mu, sigma))

    def poisson(self, means) -> np.ndarray:
        means = np.ascontiguousarray(means, dtype=np.float64)
        out = np.empty(means.size, dtype=np.int64)
        _fill_poisson(self._s, means.ravel(), out)
        return out.reshape(means.shape)

    def categorical(self, probs, n: int) -> np.ndarray:
        """``n`` draws of category indices with (unnormalised) weights ``probs``."""
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0 or np.any(probs < 0):
            raise ValueError("probs must be a nonempty nonnegative vector")
        cdf = np.cumsum(probs)
        if not cdf[-1] > 0:
            raise ValueError("probs must have positive total mass")
        out = np.empty(n, dtype=np.int64)
        _fill_categorical(self._s, cdf, out)
        return out

    def choice_rows(self, probs, draws: int) -> np.ndarray:
        """For each row of an (n, J) probability matrix, draw ``draws`` indices."""
        probs = np.ascontiguousarray(probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError("probs must be two-dimensional")
        out = np.empty((probs.shape[0], draws), dtype=np.int64)
        _fill_rows_categorical(self._s, probs, draws, out)
        return out

    def permutation(self, n: int) -> np.ndarray:
        arr = np.arange(n, dtype=np.int64)
        _shuffle(self._s, arr)
        return arr

    def shuffle(self, arr: np.ndarray) -> None:
        _shuffle(self._s, arr)
