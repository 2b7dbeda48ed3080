"""MR physics side information fed to the unrolled network.

Three soft penalty images derived from the current estimate and the
acquisition:

* data consistency: e_dc = A^T (M A x - M y), the unscaled DC gradient;
* phase: the imaginary part of x after removing the smooth reference phase
  taken from the low-pass combined image (near zero when x matches it);
* background: x divided by the low-pass magnitude, which blows up exactly
  where signal appears on top of an empty background.

The low-pass reference x0_lpf comes from the sampled center band of the
original acquisition and stays frozen across solver iterations.
"""

from dataclasses import dataclass

import numpy as np

from . import kspace as ksp_mod

EPS_FRACTION = 1e-6


@dataclass(eq=False)
class PriorBundle:
    """The three prior images plus the low-pass reference they came from."""

    e_dc: np.ndarray
    e_phase: np.ndarray
    e_background: np.ndarray
    x0_lpf: np.ndarray


def combined_lowpass(ksp, sens=None):
    """Coil-combined image from the fully sampled center band."""
    lpf = ksp_mod.lowpass_images(ksp)
    if ksp.num_coils == 1:
        return lpf[0]
    if sens is None:
        sens = ksp_mod.estimate_sensitivities(ksp)
    return ksp_mod.sense_reduce(lpf, sens)


def dc_prior(x, ksp, sens=None):
    """Data-consistency residual image A^T (M A x - M y)."""
    residual = ksp_mod.forward_model(x, ksp.mask, sens) - ksp_mod.mask_columns(
        ksp.planes, ksp.mask
    )
    return ksp_mod.adjoint_model(residual, ksp.mask, sens)


def _floored_magnitude(x0_lpf):
    mag = np.abs(x0_lpf)
    peak = mag.max()
    if peak == 0:
        return np.ones_like(mag)
    return np.maximum(mag, EPS_FRACTION * peak)


def phase_prior(x, x0_lpf):
    """Imaginary part of x referenced to the low-pass phase.

    Zero wherever x carries exactly the phase of x0_lpf.
    """
    denom = _floored_magnitude(x0_lpf)
    return np.imag(x * np.conj(x0_lpf) / denom)


def background_prior(x, x0_lpf):
    """x normalized by the floored low-pass magnitude.

    Large where x has signal but the low-pass reference is near empty.
    """
    return x / _floored_magnitude(x0_lpf)


def build_prior_bundle(x, ksp, sens=None, x0_lpf=None):
    """All three priors for the current estimate x.

    ``x0_lpf`` may be passed in to reuse the frozen low-pass reference
    across iterations; it is computed from ``ksp`` otherwise.
    """
    if ksp.num_coils == 1:
        sens = None
    elif sens is None:
        sens = ksp_mod.estimate_sensitivities(ksp)
    if x0_lpf is None:
        x0_lpf = combined_lowpass(ksp, sens)
    return PriorBundle(
        e_dc=dc_prior(x, ksp, sens),
        e_phase=phase_prior(x, x0_lpf),
        e_background=background_prior(x, x0_lpf),
        x0_lpf=x0_lpf,
    )
