"""Centered orthonormal 2D Fourier transforms.

Images and k-space planes are plain complex ndarrays whose last two axes
are (row, column). Leading axes (coil, slice, batch) pass through untouched.
The DC bin lives at index (H // 2, W // 2), which is what every masking and
low-pass routine in this package assumes.
"""

import numpy as np
import scipy.fft


def _check_image(x):
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValueError(f"expected at least a 2D array, got shape {x.shape}")
    if x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ValueError(f"degenerate image shape {x.shape}")
    return x


def fft2c(img):
    """Centered orthonormal 2D FFT over the last two axes.

    A constant image maps to a single nonzero bin at (H//2, W//2); the
    transform preserves the l2 norm exactly up to float rounding.
    """
    img = _check_image(img)
    shifted = np.fft.ifftshift(img, axes=(-2, -1))
    spec = scipy.fft.fft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(spec, axes=(-2, -1))


def ifft2c(ksp):
    """Inverse of :func:`fft2c`. ``ifft2c(fft2c(x)) == x`` to float rounding."""
    ksp = _check_image(ksp)
    shifted = np.fft.ifftshift(ksp, axes=(-2, -1))
    img = scipy.fft.ifft2(shifted, axes=(-2, -1), norm="ortho")
    return np.fft.fftshift(img, axes=(-2, -1))


def center_index(n):
    """Index of the DC sample along an axis of length n (0-based)."""
    return n // 2
