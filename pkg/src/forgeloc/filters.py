"""Separable Gaussian filtering on numpy arrays (reflect padding)."""

import math

import numpy as np

from .errors import DomainError


def gaussian_kernel1d(sigma: float, radius: int = None) -> np.ndarray:
    """Normalized 1-D Gaussian taps; radius defaults to ceil(3*sigma)."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.ones(1, dtype=np.float64)
    if radius is None:
        radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _convolve_axis(arr, kernel, axis):
    r = len(kernel) // 2
    if r == 0:
        return arr * kernel[0]
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (r, r)
    padded = np.pad(arr, pad, mode="reflect")
    n = arr.shape[axis]
    out = np.zeros(arr.shape, dtype=np.float64)
    sl = [slice(None)] * arr.ndim
    for k, w in enumerate(kernel):
        sl[axis] = slice(k, k + n)
        out += w * padded[tuple(sl)]
    return out


def gaussian_blur(arr: np.ndarray, sigma: float, radius: int = None) -> np.ndarray:
    """Blur the trailing two axes with a separable Gaussian; sigma=0 is the
    identity. Output dtype matches the input."""
    if sigma < 0:
        raise DomainError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return arr.copy()
    kernel = gaussian_kernel1d(sigma, radius)
    out = _convolve_axis(arr.astype(np.float64), kernel, arr.ndim - 2)
    out = _convolve_axis(out, kernel, arr.ndim - 1)
    return out.astype(arr.dtype)
