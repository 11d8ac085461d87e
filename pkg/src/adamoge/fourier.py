"""Half-spectrum FFT pair for real signals.

Convention: unnormalised forward transform, 1/n-scaled inverse, so that for
a length-L real signal with half spectrum X

    sum(x**2) == (|X_0|**2 + 2*sum_{0<k<L/2} |X_k|**2 + [L even]|X_{L/2}|**2) / L.

Power-of-two lengths run through an iterative radix-2 kernel.  Composite
lengths n = r * 2^a with a small odd part r (96, 192, 336, 720, ...) are
decimated into r power-of-two sub-transforms recombined by a batched r x r
twiddle contraction.  Everything else (large prime factors, e.g. 97) goes
through Bluestein's chirp-z algorithm on a padded power of two.  All paths
are O(n log n) per row and operate on whole row batches.
"""

from __future__ import annotations

import numpy as np

from . import kernels


def half_bins(n: int) -> int:
    """Number of non-redundant spectrum bins of a length-n real signal."""
    return n // 2 + 1


def _is_pow2(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for i in range(1, n):
        rev[i] = (rev[i >> 1] >> 1) | ((i & 1) << (bits - 1))
    return rev


_pow2_plans: dict[int, tuple[np.ndarray, np.ndarray]] = {}
_split_plans: dict[int, tuple[int, int, np.ndarray]] = {}
_bluestein_plans: dict[int, tuple[np.ndarray, np.ndarray, int]] = {}

# largest odd co-factor the split-radix path recombines directly; beyond
# this the r^2 twiddle contraction stops paying off versus Bluestein
_SPLIT_ODD_MAX = 45


def _pow2_plan(n: int) -> tuple[np.ndarray, np.ndarray]:
    plan = _pow2_plans.get(n)
    if plan is None:
        rev = _bit_reverse(n)
        tw = np.exp(-2j * np.pi * np.arange(max(n // 2, 1)) / n)
        plan = (rev, tw)
        _pow2_plans[n] = plan
    return plan


def _fft_pow2(z: np.ndarray) -> np.ndarray:
    rev, tw = _pow2_plan(z.shape[1])
    return kernels.fft_pow2(z, rev, tw)


def _split_plan(n: int) -> tuple[int, int, np.ndarray]:
    plan = _split_plans.get(n)
    if plan is None:
        m = n & (-n)  # largest power-of-two divisor
        r = n // m
        k = np.arange(n).reshape(r, m)  # k[c, k'] = c*m + k'
        q = np.arange(r)
        w = np.exp(-2j * np.pi * q[None, :, None] * k[:, None, :] / n)
        plan = (m, r, np.ascontiguousarray(w.transpose(2, 0, 1)))  # (m, c, q)
        _split_plans[n] = plan
    return plan


def _fft_split(z: np.ndarray) -> np.ndarray:
    # decimation in time over the odd part r: X[c*m + k'] =
    # sum_q w_n^(q*(c*m+k')) * FFT_m(x[q::r])[k']
    rows = z.shape[0]
    m, r, w = _split_plan(z.shape[1])
    subs = np.ascontiguousarray(z.reshape(rows, m, r).transpose(0, 2, 1))
    subs = _fft_pow2(subs.reshape(rows * r, m)).reshape(rows, r, m)
    out = w @ np.ascontiguousarray(subs.transpose(2, 1, 0))  # (m, c, rows)
    return np.ascontiguousarray(out.transpose(2, 1, 0)).reshape(rows, z.shape[1])


def _bluestein_plan(n: int) -> tuple[np.ndarray, np.ndarray, int]:
    plan = _bluestein_plans.get(n)
    if plan is None:
        m = 1 << (2 * n - 1).bit_length()
        # chirp phase n^2/2 handled via k^2 mod 2n to keep sin/cos arguments small
        k = np.arange(n, dtype=np.int64)
        phase = np.pi * ((k * k) % (2 * n)) / n
        a = np.exp(-1j * phase)
        b = np.zeros(m, dtype=np.complex128)
        b[:n] = np.conj(a)
        b[m - n + 1 :] = np.conj(a[1:][::-1])
        # plan transform always built on the numpy core: backend-independent plans
        bfft = kernels._fft_pow2_numpy(b[None, :].copy(), *_pow2_plan(m))[0]
        plan = (a, bfft, m)
        _bluestein_plans[n] = plan
    return plan


def _fft_bluestein(z: np.ndarray) -> np.ndarray:
    n = z.shape[1]
    a, bfft, m = _bluestein_plan(n)
    y = np.zeros((z.shape[0], m), dtype=np.complex128)
    y[:, :n] = z * a
    conv = _fft_pow2(y)
    conv *= bfft
    conv = np.conj(_fft_pow2(np.conj(conv))) / m
    return conv[:, :n] * a


def fft_rows(z: np.ndarray, inverse: bool = False) -> np.ndarray:
    """Unnormalised complex DFT of each row of a (rows, n) complex array."""
    if inverse:
        return np.conj(fft_rows(np.conj(z)))
    z = np.asarray(z, dtype=np.complex128)
    n = z.shape[1]
    if n == 1:
        return z.copy()
    if _is_pow2(n):
        return _fft_pow2(z)
    if n // (n & (-n)) <= _SPLIT_ODD_MAX:
        return _fft_split(z)
    return _fft_bluestein(z)


def rfft(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Half spectrum of real input along the last axis.

    Returns (re, im) float64 arrays of shape ``x.shape[:-1] + (L//2+1,)``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"rfft needs length >= 2, got {n}")
    flat = x.reshape(-1, n).astype(np.complex128)
    spec = fft_rows(flat)[:, : half_bins(n)]
    shape = x.shape[:-1] + (half_bins(n),)
    re = np.ascontiguousarray(spec.real).reshape(shape)
    im = np.ascontiguousarray(spec.imag).reshape(shape)
    # bin 0 (and Nyquist for even n) of a real signal is exactly real; the
    # chirp-z path leaves rounding residue there, so pin it.
    im[..., 0] = 0.0
    if n % 2 == 0:
        im[..., -1] = 0.0
    return re, im


def irfft(re: np.ndarray, im: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`rfft`: real signal of length ``n`` along the last axis.

    Imaginary parts of the DC bin (and of the Nyquist bin for even ``n``) do
    not contribute, matching the Hermitian-extension definition.
    """
    re = np.asarray(re, dtype=np.float64)
    im = np.asarray(im, dtype=np.float64)
    if re.shape != im.shape:
        raise ValueError(f"re/im shape mismatch: {re.shape} vs {im.shape}")
    f = half_bins(n)
    if n < 2 or re.shape[-1] != f:
        raise ValueError(
            f"spectrum has {re.shape[-1]} bins, inconsistent with output length {n}"
        )
    spec = (re + 1j * im).reshape(-1, f)
    full = np.empty((spec.shape[0], n), dtype=np.complex128)
    full[:, :f] = spec
    full[:, f:] = np.conj(spec[:, 1 : n - f + 1])[:, ::-1]
    # non-contributing imaginary components must not even perturb rounding
    full[:, 0] = spec[:, 0].real
    if n % 2 == 0:
        full[:, f - 1] = spec[:, f - 1].real
    out = fft_rows(full, inverse=True).real / n
    return np.ascontiguousarray(out).reshape(re.shape[:-1] + (n,))


def half_weights(n: int) -> np.ndarray:
    """Energy multiplicity of each half-spectrum bin: 1 at DC (and Nyquist for
    even n), 2 for interior bins that stand in for a conjugate pair."""
    w = np.full(half_bins(n), 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w
