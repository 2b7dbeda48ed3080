"""Cartesian undersampling masks, multi-coil k-space, and SENSE-style coil ops.

Sampling is along full k-space columns (phase-encoding direction), fastMRI
style: a fully kept center block of ``floor(center_fraction * width)``
columns plus Bernoulli-kept outer columns calibrated so the expected total
equals ``width / acceleration``.
"""

from dataclasses import dataclass, field

import json
import numpy as np

from .transforms import fft2c, ifft2c, center_index


# ---------------------------------------------------------------------------
# sampling masks


@dataclass(frozen=True, eq=False)
class SamplingMask:
    """Column sampling pattern for one acquisition.

    ``keep`` is a boolean vector over k-space columns; the central
    ``floor(center_fraction * width)`` columns are always True.
    """

    width: int
    acceleration: float
    center_fraction: float
    seed: int
    keep: np.ndarray = field(repr=False)

    def __post_init__(self):
        keep = np.asarray(self.keep, dtype=bool)
        if keep.shape != (self.width,):
            raise ValueError(f"keep has shape {keep.shape}, expected ({self.width},)")
        object.__setattr__(self, "keep", keep)

    @property
    def num_center(self):
        return int(self.center_fraction * self.width)

    def center_block(self):
        """(lo, hi) of the nominal always-kept center block, hi exclusive."""
        n = self.num_center
        lo = self.width // 2 - n // 2
        return lo, lo + n

    def sampled_center_run(self):
        """(lo, hi) of the maximal contiguous kept run containing the DC column.

        This is the widest band guaranteed fully sampled around DC; it is what
        low-pass estimation crops to. At acceleration 1 it spans every column.
        """
        dc = center_index(self.width)
        if not self.keep[dc]:
            raise ValueError("DC column is not sampled")
        lo = dc
        while lo > 0 and self.keep[lo - 1]:
            lo -= 1
        hi = dc + 1
        while hi < self.width and self.keep[hi]:
            hi += 1
        return lo, hi

    def to_json(self):
        return json.dumps(
            {
                "width": self.width,
                "acceleration": self.acceleration,
                "center_fraction": self.center_fraction,
                "seed": self.seed,
                "keep": [int(k) for k in self.keep],
            }
        )

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(
            width=int(d["width"]),
            acceleration=float(d["acceleration"]),
            center_fraction=float(d["center_fraction"]),
            seed=int(d["seed"]),
            keep=np.asarray(d["keep"], dtype=bool),
        )


def expected_kept_columns(width, acceleration, center_fraction):
    """Analytic expected number of kept columns for the Bernoulli design."""
    n_center = int(center_fraction * width)
    if width == n_center:
        return float(width)
    p = (width / acceleration - n_center) / (width - n_center)
    return n_center + (width - n_center) * p


def make_cartesian_mask(width, acceleration, center_fraction, seed, exact=False):
    """Draw a column sampling mask.

    Parameters
    ----------
    width : k-space width (number of columns).
    acceleration : nominal undersampling factor R; expected kept fraction 1/R.
    center_fraction : fraction of columns in the always-kept center block.
    seed : RNG seed; the same arguments always give the same mask.
    exact : if True, keep exactly round(width / R) columns instead of
        Bernoulli sampling (center block still always kept).
    """
    if width < 1:
        raise ValueError(f"width must be >= 1, got {width}")
    if acceleration < 1:
        raise ValueError(f"acceleration must be >= 1, got {acceleration}")
    if not 0 < center_fraction < 1:
        raise ValueError(f"center_fraction must be in (0, 1), got {center_fraction}")

    n_center = int(center_fraction * width)
    lo = width // 2 - n_center // 2
    hi = lo + n_center

    keep = np.zeros(width, dtype=bool)
    keep[lo:hi] = True
    outer = np.flatnonzero(~keep)
    rng = np.random.default_rng(seed)

    if width > n_center:
        p = (width / acceleration - n_center) / (width - n_center)
        if p < 0:
            raise ValueError(
                "center block already exceeds the sampling budget: "
                f"floor({center_fraction} * {width}) = {n_center} columns kept "
                f"but width/acceleration = {width / acceleration:.3f}"
            )
        if exact:
            n_extra = int(round(width / acceleration)) - n_center
            n_extra = min(max(n_extra, 0), outer.size)
            chosen = rng.permutation(outer)[:n_extra]
            keep[chosen] = True
        else:
            keep[outer] = rng.random(outer.size) < p

    return SamplingMask(
        width=width,
        acceleration=float(acceleration),
        center_fraction=float(center_fraction),
        seed=int(seed),
        keep=keep,
    )


def mask_columns(planes, mask):
    """Zero out unsampled columns. Kept columns pass through bitwise."""
    planes = np.asarray(planes)
    if planes.shape[-1] != mask.width:
        raise ValueError(
            f"mask width {mask.width} does not match k-space width {planes.shape[-1]}"
        )
    return np.where(mask.keep, planes, 0)


# ---------------------------------------------------------------------------
# multi-coil containers


@dataclass(eq=False)
class MultiCoilKSpace:
    """Masked k-space planes for one slice: shape (coils, H, W) plus its mask."""

    planes: np.ndarray
    mask: SamplingMask

    def __post_init__(self):
        planes = np.asarray(self.planes)
        if planes.ndim != 3:
            raise ValueError(f"expected (coils, H, W) planes, got shape {planes.shape}")
        if not np.iscomplexobj(planes):
            planes = planes.astype(np.complex128)
        if planes.shape[-1] != self.mask.width:
            raise ValueError(
                f"k-space width {planes.shape[-1]} does not match mask width {self.mask.width}"
            )
        self.planes = planes

    @property
    def num_coils(self):
        return self.planes.shape[0]

    @property
    def shape(self):
        return self.planes.shape[1:]


@dataclass(eq=False)
class SensitivityMaps:
    """Coil sensitivity maps, shape (coils, H, W), sum_q |S_q|^2 == 1 on support."""

    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps)
        if maps.ndim != 3:
            raise ValueError(f"expected (coils, H, W) maps, got shape {maps.shape}")
        self.maps = maps.astype(np.complex128, copy=False)

    @property
    def num_coils(self):
        return self.maps.shape[0]


# ---------------------------------------------------------------------------
# coil combination and the acquisition operator


def apply_mask(kspace_full, mask):
    """Bundle fully sampled planes with a mask, zeroing unsampled columns."""
    return MultiCoilKSpace(planes=mask_columns(kspace_full, mask), mask=mask)


def lowpass_images(ksp):
    """Per-coil images from the fully sampled center band only.

    Crops k-space to the contiguous kept column run around DC, zeroes the
    rest, and inverse transforms. Needs a nonempty center block.
    """
    if ksp.mask.num_center < 1:
        raise ValueError("mask has an empty center block")
    lo, hi = ksp.mask.sampled_center_run()
    cropped = np.zeros_like(ksp.planes)
    cropped[..., lo:hi] = ksp.planes[..., lo:hi]
    return ifft2c(cropped)


def rss_combine(coil_images):
    """Root-sum-of-squares magnitude across the coil axis (axis 0)."""
    coil_images = np.asarray(coil_images)
    return np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=0))


def estimate_sensitivities(ksp):
    """Sensitivity maps from the low-pass images, normalized per pixel.

    S_q = x_lpf_q / rss(x_lpf); pixels whose combined low-pass magnitude is
    below 1e-12 of the peak get zero sensitivity instead of noise blow-up.
    """
    lpf = lowpass_images(ksp)
    rss = rss_combine(lpf)
    eps = 1e-12 * rss.max()
    maps = np.zeros_like(lpf)
    np.divide(lpf, rss, out=maps, where=rss > eps)
    return SensitivityMaps(maps=maps)


def sense_expand(image, sens):
    """Project a combined image onto coils: (S_q * x) for each coil q."""
    return sens.maps * np.asarray(image)[None]


def sense_reduce(coil_images, sens):
    """Adjoint of :func:`sense_expand`: sum_q conj(S_q) * x_q."""
    return np.sum(np.conj(sens.maps) * np.asarray(coil_images), axis=0)


def forward_model(image, mask, sens=None):
    """Acquisition operator A: image -> masked multi-coil k-space planes.

    With ``sens`` None the image is treated as a single coil plane
    (A = masked centered FFT).
    """
    if sens is None:
        coils = np.asarray(image)[None]
    else:
        coils = sense_expand(image, sens)
    return mask_columns(fft2c(coils), mask)


def adjoint_model(planes, mask, sens=None):
    """Adjoint of :func:`forward_model`: masked k-space planes -> image."""
    imgs = ifft2c(mask_columns(planes, mask))
    if sens is None:
        return imgs[0]
    return sense_reduce(imgs, sens)


def zero_filled_recon(ksp, sens=None):
    """Directly invert masked k-space.

    Single coil: plain inverse centered FFT. Multi-coil: per-coil inverse
    transform followed by a sensitivity-weighted combine, with maps estimated
    from the sampled center band unless given.
    """
    imgs = ifft2c(ksp.planes)
    if ksp.num_coils == 1:
        return imgs[0]
    if sens is None:
        sens = estimate_sensitivities(ksp)
    return sense_reduce(imgs, sens)
