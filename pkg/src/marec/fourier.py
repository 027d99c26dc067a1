"""Radix-2 FFT and centered orthonormal 2-D transforms.

Desk-scale transforms (8-128 per axis) on power-of-two extents only. The 2-D
transforms are centered (DC at H/2, W/2) and unitary: 1/sqrt(N) scaling in
each direction, so fft2c and ifft2c are exact inverses and preserve energy.
"""

import numpy as np

from .errors import ConfigurationError


def _check_pow2(n):
    if n < 1 or n & (n - 1):
        raise ConfigurationError(f"extent {n} is not a power of two (radix-2 FFT)")


def _bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft1d(a, inverse=False):
    """Unscaled iterative Cooley-Tukey transform along the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[-1]
    _check_pow2(n)
    if n == 1:
        return a.copy()
    out = a[..., _bit_reverse_indices(n)].copy()
    sign = 1.0 if inverse else -1.0
    m = 2
    while m <= n:
        half = m // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / m)
        blocks = out.reshape(*out.shape[:-1], n // m, m)
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        m *= 2
    return out


def _shift(a, axes, inverse):
    for ax in axes:
        n = a.shape[ax]
        a = np.roll(a, -(n // 2) if inverse else n // 2, axis=ax)
    return a


def fft2c(img):
    """Centered orthonormal 2-D FFT over the last two axes."""
    x = np.asarray(img, dtype=np.complex128)
    h, w = x.shape[-2], x.shape[-1]
    _check_pow2(h)
    _check_pow2(w)
    x = _shift(x, (-2, -1), inverse=True)
    x = fft1d(x)
    x = fft1d(x.swapaxes(-1, -2)).swapaxes(-1, -2)
    x = _shift(x, (-2, -1), inverse=False)
    return x / np.sqrt(h * w)


def ifft2c(ks):
    """Inverse of fft2c (also unitary)."""
    x = np.asarray(ks, dtype=np.complex128)
    h, w = x.shape[-2], x.shape[-1]
    _check_pow2(h)
    _check_pow2(w)
    x = _shift(x, (-2, -1), inverse=True)
    x = fft1d(x, inverse=True)
    x = fft1d(x.swapaxes(-1, -2), inverse=True).swapaxes(-1, -2)
    x = _shift(x, (-2, -1), inverse=False)
    return x / np.sqrt(h * w)
