"""Orthonormal Haar wavelets, soft thresholding, and ISTA reconstruction.

The solver minimizes

    f(x) = || M A x - M y ||_2^2 + lambda * || W x ||_1

by alternating a data-consistency gradient step with the wavelet-domain
shrinkage prox. W is an orthonormal 2D Haar transform; shrinkage is applied
to detail bands only, the approximation band passes through untouched.
"""

from dataclasses import dataclass, field

import csv
import numpy as np

from . import kspace as ksp_mod


def soft_threshold(u, lam):
    """Complex soft thresholding: max(|u| - lam, 0) * u / |u|.

    Works elementwise on real or complex arrays; ``lam`` may be a scalar or a
    broadcastable nonnegative array.
    """
    lam = np.asarray(lam)
    if np.any(lam < 0):
        raise ValueError("threshold must be nonnegative")
    u = np.asarray(u)
    mag = np.abs(u)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.maximum(1.0 - lam / mag, 0.0)
    return np.where(mag > 0, u * scale, 0)


# ---------------------------------------------------------------------------
# Haar wavelets


@dataclass(eq=False)
class WaveletCoeffs:
    """Multi-level 2D Haar coefficients.

    ``details[k]`` holds the (LH, HL, HH) bands of level k (finest first);
    ``approx`` is the coarsest approximation band. ``shape`` is the original
    image shape before internal padding, restored by :func:`wavelet_inverse`.
    """

    levels: int
    details: list = field(repr=False)
    approx: np.ndarray = field(repr=False)
    shape: tuple = ()

    def detail_l1(self):
        return float(sum(np.sum(np.abs(b)) for bands in self.details for b in bands))

    def total_l1(self):
        return self.detail_l1() + float(np.sum(np.abs(self.approx)))


_SQRT2 = np.sqrt(2.0)


def _haar_split(x, axis):
    lo = np.take(x, range(0, x.shape[axis], 2), axis=axis)
    hi = np.take(x, range(1, x.shape[axis], 2), axis=axis)
    return (lo + hi) / _SQRT2, (lo - hi) / _SQRT2


def _haar_merge(a, d, axis):
    shape = list(a.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.result_type(a, d))
    even = [slice(None)] * out.ndim
    odd = [slice(None)] * out.ndim
    even[axis] = slice(0, None, 2)
    odd[axis] = slice(1, None, 2)
    out[tuple(even)] = (a + d) / _SQRT2
    out[tuple(odd)] = (a - d) / _SQRT2
    return out


def _pad_amounts(n, block):
    total = (-n) % block
    return total // 2, total - total // 2


def wavelet_forward(x, levels):
    """Orthonormal 2D Haar analysis with ``levels`` decomposition levels.

    Inputs whose sides are not multiples of 2**levels are zero-padded
    (split evenly per side); the inverse crops the padding back off, so
    round-trips are exact regardless of shape.
    """
    x = np.asarray(x)
    if x.ndim != 2:
        raise ValueError(f"expected a 2D image, got shape {x.shape}")
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if 2 ** levels > min(x.shape):
        raise ValueError(
            f"{levels} levels is too deep for a {x.shape[0]}x{x.shape[1]} image"
        )
    block = 2 ** levels
    (top, bot) = _pad_amounts(x.shape[0], block)
    (left, right) = _pad_amounts(x.shape[1], block)
    padded = np.pad(x, ((top, bot), (left, right)))

    details = []
    approx = padded
    for _ in range(levels):
        lo_w, hi_w = _haar_split(approx, axis=-1)
        ll, lh = _haar_split(lo_w, axis=-2)
        hl, hh = _haar_split(hi_w, axis=-2)
        details.append((lh, hl, hh))
        approx = ll
    return WaveletCoeffs(levels=levels, details=details, approx=approx, shape=x.shape)


def wavelet_inverse(coeffs):
    """Exact inverse of :func:`wavelet_forward`."""
    approx = coeffs.approx
    for lh, hl, hh in reversed(coeffs.details):
        lo_w = _haar_merge(approx, lh, axis=-2)
        hi_w = _haar_merge(hl, hh, axis=-2)
        approx = _haar_merge(lo_w, hi_w, axis=-1)
    h, w = coeffs.shape
    block = 2 ** coeffs.levels
    top, _ = _pad_amounts(h, block)
    left, _ = _pad_amounts(w, block)
    return approx[top:top + h, left:left + w]


def threshold_details(coeffs, lam):
    """Soft-threshold every detail band; the approximation band is kept."""
    details = [tuple(soft_threshold(b, lam) for b in bands) for bands in coeffs.details]
    return WaveletCoeffs(
        levels=coeffs.levels, details=details, approx=coeffs.approx, shape=coeffs.shape
    )


# ---------------------------------------------------------------------------
# ISTA


@dataclass
class IstaConfig:
    """Solver settings.

    ``lam`` None means scale-relative: 1e-3 * max |x_0| with x_0 the
    zero-filled start. ``fista`` turns on Nesterov momentum.
    """

    iterations: int = 300
    rho: float = 1.0
    lam: float = None
    levels: int = 3
    fista: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.rho <= 0:
            raise ValueError("rho must be > 0")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


@dataclass
class IstaResult:
    image: np.ndarray
    lam: float
    objective_trace: list  # rows of (iteration, data_term, l1_term, total)


def dc_gradient_step(x, ksp, rho, sens=None):
    """One data-consistency gradient step: x - rho * A^T (M A x - M y)."""
    residual = ksp_mod.forward_model(x, ksp.mask, sens) - ksp.planes
    return x - rho * ksp_mod.adjoint_model(residual, ksp.mask, sens)


def objective_value(x, ksp, lam, levels, sens=None):
    """(data_term, l1_term, total) of the l1-regularized CS objective."""
    residual = ksp_mod.forward_model(x, ksp.mask, sens) - ksp_mod.mask_columns(
        ksp.planes, ksp.mask
    )
    data = float(np.sum(np.abs(residual) ** 2))
    l1 = wavelet_forward(x, levels).total_l1()
    return data, lam * l1, data + lam * l1


def ista_solve(ksp, config=None, sens=None):
    """Iterative shrinkage-thresholding from the zero-filled start.

    Multi-coil data uses sensitivity maps (estimated from the sampled
    center if not given); single-coil data uses the plain transforms.
    Records the objective before iterating and after every iteration.
    """
    if config is None:
        config = IstaConfig()
    if ksp.num_coils == 1:
        sens = None
    elif sens is None:
        sens = ksp_mod.estimate_sensitivities(ksp)

    x = ksp_mod.zero_filled_recon(ksp, sens)
    lam = config.lam
    if lam is None:
        lam = 1e-3 * float(np.max(np.abs(x)))

    trace = [(0,) + objective_value(x, ksp, lam, config.levels, sens)]
    t_momentum = 1.0
    x_prev = x
    z = x
    for it in range(1, config.iterations + 1):
        r = dc_gradient_step(z, ksp, config.rho, sens)
        coeffs = threshold_details(wavelet_forward(r, config.levels), lam * config.rho)
        x = wavelet_inverse(coeffs)
        if config.fista:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t_momentum ** 2))
            z = x + ((t_momentum - 1.0) / t_next) * (x - x_prev)
            t_momentum = t_next
        else:
            z = x
        x_prev = x
        trace.append((it,) + objective_value(x, ksp, lam, config.levels, sens))
    return IstaResult(image=x, lam=lam, objective_trace=trace)


def write_objective_trace(path, trace):
    """Objective trace as CSV with columns iteration, data_term, l1_term, total."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "data_term", "l1_term", "total"])
        for row in trace:
            writer.writerow([row[0]] + [f"{v:.17g}" for v in row[1:]])
