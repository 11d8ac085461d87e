"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The only kernel that matters for wall-clock time is the batched complex FFT
core used by :mod:`adamoge.fourier`.  Backend selection:

* ``ADAMOGE_BACKEND=numba``  force the jitted row-loop kernels (error if
  numba is missing),
* ``ADAMOGE_BACKEND=numpy``  force the vectorised pure-numpy kernels,
* unset / ``auto``           numba when importable, numpy otherwise.

Both backends implement the identical radix-2 butterfly schedule, so they
agree to the last few ulps; ``benchmarks/bench_backends.py`` compares them.
"""

from __future__ import annotations

import os

import numpy as np

_VALID = ("auto", "numba", "numpy")

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


def _resolve(choice: str) -> str:
    if choice not in _VALID:
        raise ValueError(f"unknown backend {choice!r}; expected one of {_VALID}")
    if choice == "numba" and not HAVE_NUMBA:
        raise RuntimeError("backend 'numba' requested but numba is not importable")
    if choice == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    return choice


_backend = _resolve(os.environ.get("ADAMOGE_BACKEND", "auto").lower())


def active_backend() -> str:
    return _backend


def set_backend(choice: str) -> str:
    """Switch kernel backend at runtime (used by benchmarks/tests)."""
    global _backend
    _backend = _resolve(choice)
    return _backend


# ---------------------------------------------------------------------------
# radix-2 core, power-of-two length, forward (e^{-2*pi*i*k*t/N}) only.
# Inverse transforms are conj(forward(conj(z))) and are handled one level up.
# ---------------------------------------------------------------------------


def _fft_pow2_numpy(z: np.ndarray, rev: np.ndarray, tw: np.ndarray) -> np.ndarray:
    # z: (rows, n) complex128, n a power of two. Returns a new array.
    n = z.shape[1]
    z = z[:, rev]
    m = 2
    while m <= n:
        half = m // 2
        w = tw[0 : n // 2 : n // m]
        z3 = z.reshape(z.shape[0], n // m, m)
        t = z3[:, :, half:] * w
        u = z3[:, :, :half]
        z3[:, :, half:] = u - t
        z3[:, :, :half] = u + t
        m *= 2
    return z


@njit(cache=True)
def _fft_pow2_numba(z, rev, tw):  # pragma: no cover - compiled
    rows, n = z.shape
    out = np.empty_like(z)
    for r in range(rows):
        row = out[r]
        src = z[r]
        for i in range(n):
            row[i] = src[rev[i]]
        m = 2
        while m <= n:
            half = m // 2
            stride = n // m
            base = 0
            while base < n:
                for j in range(half):
                    t = row[base + half + j] * tw[j * stride]
                    u = row[base + j]
                    row[base + j] = u + t
                    row[base + half + j] = u - t
                base += m
            m *= 2
    return out


def fft_pow2(z: np.ndarray, rev: np.ndarray, tw: np.ndarray) -> np.ndarray:
    """Forward FFT of each row of ``z`` (power-of-two length), unnormalised."""
    if _backend == "numba":
        return _fft_pow2_numba(np.ascontiguousarray(z), rev, tw)
    return _fft_pow2_numpy(z, rev, tw)
