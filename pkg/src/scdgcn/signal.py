"""Radix-2 FFT and spectral features of the Percoll column profile."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from scdgcn.errors import ShapeError


def is_power_of_two(n: int) -> bool:
    return n >= 1 and n & (n - 1) == 0


def next_power_of_two(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


@lru_cache(maxsize=32)
def _plan(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Bit-reversal permutation and the full twiddle table ``exp(-2j*pi*k/n)``."""
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    twiddles = np.exp(-2j * np.pi * np.arange(n // 2) / n)
    rev.setflags(write=False)
    twiddles.setflags(write=False)
    return rev, twiddles


def fft(x) -> np.ndarray:
    """Iterative decimation-in-time radix-2 FFT of a length-2^m sequence."""
    x = np.asarray(x)
    if x.ndim != 1:
        raise ShapeError(f"fft expects a 1-D signal, got shape {x.shape}")
    n = x.shape[0]
    if n < 2 or not is_power_of_two(n):
        raise ShapeError(f"fft length must be a power of two >= 2, got {n}")
    rev, twiddles = _plan(n)
    a = x.astype(np.complex128)[rev]
    size = 2
    while size <= n:
        half = size // 2
        w = twiddles[:: n // size]
        blocks = a.reshape(-1, size)
        top = blocks[:, :half].copy()
        bottom = blocks[:, half:] * w
        blocks[:, :half] = top + bottom
        blocks[:, half:] = top - bottom
        size *= 2
    return a


def ifft(spectrum) -> np.ndarray:
    """Inverse via conjugate-FFT-conjugate."""
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    return np.conj(fft(np.conj(spectrum))) / spectrum.shape[0]


def column_profile(img) -> np.ndarray:
    """Mean intensity of each row (the density-gradient axis)."""
    px = np.asarray(getattr(img, "pixels", img), dtype=np.float64)
    if px.ndim != 2:
        raise ShapeError(f"expected a 2-D image, got shape {px.shape}")
    return px.mean(axis=1)


def spectral_features(img, f_fft: int, n_fft: int | None = None) -> np.ndarray:
    """Magnitudes of the first ``f_fft`` non-DC bins of the mean-removed profile.

    The profile is zero-padded to ``n_fft`` points (default: next power of two
    of the profile length) and each magnitude is divided by the profile length.
    """
    profile = column_profile(img)
    length = profile.shape[0]
    if n_fft is None:
        n_fft = next_power_of_two(length)
    if not is_power_of_two(n_fft) or n_fft < length:
        raise ShapeError(f"n_fft must be a power of two >= profile length {length}, got {n_fft}")
    if f_fft < 1 or f_fft > n_fft // 2:
        raise ShapeError(f"f_fft={f_fft} exceeds half the padded length {n_fft}")
    padded = np.zeros(n_fft)
    if np.ptp(profile) > 0:  # a flat profile centres to exact zeros
        padded[:length] = profile - profile.mean()
    spectrum = fft(padded)
    return (np.abs(spectrum[1:f_fft + 1]) / length).astype(np.float32)
