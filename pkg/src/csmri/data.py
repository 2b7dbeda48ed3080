"""Synthetic multi-slice, multi-coil phantom volumes and dataset containers.

Volumes are stacks of ellipse phantoms whose ellipses are cross-sections of
3D ellipsoids, so shapes drift smoothly from slice to slice. Each slice gets
a slowly varying polynomial phase; coils get Gaussian magnitude profiles with
linear phase ramps, normalized per pixel so sum_q |S_q|^2 = 1 exactly.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kspace as ksp_mod
from .transforms import fft2c


# base ellipse table: value, half-axes (a, b), center (x0, y0), angle,
# ellipsoid half-depth c and depth center zc in normalized coordinates
_BASE_ELLIPSES = [
    (0.80, 0.72, 0.92, 0.00, 0.00, 0.00, 1.60, 0.00),
    (-0.30, 0.64, 0.84, 0.00, -0.02, 0.00, 1.50, 0.00),
    (0.22, 0.20, 0.34, 0.25, 0.08, -0.40, 1.10, 0.10),
    (0.22, 0.24, 0.38, -0.25, 0.06, 0.40, 1.20, -0.10),
    (0.30, 0.18, 0.16, 0.00, 0.36, 0.00, 0.90, 0.05),
    (0.25, 0.09, 0.09, 0.00, -0.12, 0.00, 0.80, -0.05),
    (0.20, 0.06, 0.10, -0.10, -0.52, 0.20, 0.70, 0.15),
    (0.20, 0.07, 0.06, 0.10, -0.55, -0.20, 0.75, -0.15),
]


@dataclass(eq=False)
class PhantomVolume:
    """Complex image stack (slices, H, W) plus the coil maps used to image it."""

    images: np.ndarray
    coil_maps: np.ndarray  # (coils, H, W), sum_q |S_q|^2 == 1 per pixel
    meta: dict = field(default_factory=dict)

    @property
    def num_slices(self):
        return self.images.shape[0]

    @property
    def shape(self):
        return self.images.shape[1:]


def _ellipse_layer(u, v, value, a, b, x0, y0, theta, softness):
    ct, st = np.cos(theta), np.sin(theta)
    ur = (u - x0) * ct + (v - y0) * st
    vr = -(u - x0) * st + (v - y0) * ct
    q = (ur / a) ** 2 + (vr / b) ** 2
    # smooth edge roughly one pixel wide keeps ringing mild
    return value / (1.0 + np.exp(np.clip((q - 1.0) / softness, -60, 60)))


def make_coil_maps(size, num_coils, seed=0):
    """Gaussian-profile coils on a ring, pixelwise normalized to unit RSS."""
    if num_coils < 1:
        raise ValueError(f"num_coils must be >= 1, got {num_coils}")
    if num_coils == 1:
        return np.ones((1, size, size), dtype=np.complex128)
    rng = np.random.default_rng(seed)
    grid = np.linspace(-1.0, 1.0, size)
    v, u = np.meshgrid(grid, grid, indexing="ij")
    maps = np.empty((num_coils, size, size), dtype=np.complex128)
    for qi in range(num_coils):
        angle = 2.0 * np.pi * qi / num_coils + rng.uniform(-0.15, 0.15)
        cu, cv = 1.25 * np.cos(angle), 1.25 * np.sin(angle)
        sigma = 1.1 + rng.uniform(-0.1, 0.1)
        mag = np.exp(-((u - cu) ** 2 + (v - cv) ** 2) / (2.0 * sigma ** 2))
        p0, p1, p2 = rng.uniform(-np.pi, np.pi), rng.uniform(-0.8, 0.8), rng.uniform(-0.8, 0.8)
        maps[qi] = mag * np.exp(1j * (p0 + p1 * u + p2 * v))
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))
    return maps / rss


def make_phantom(size, num_slices=1, num_coils=1, seed=0):
    """Seeded random variation of an ellipse head phantom.

    Every ellipse is jittered per volume and embedded in a 3D ellipsoid so
    adjacent slices differ smoothly. Pixel magnitudes live in [0, ~1].
    """
    if size < 8:
        raise ValueError(f"size must be >= 8, got {size}")
    if num_slices < 1:
        raise ValueError(f"num_slices must be >= 1, got {num_slices}")
    rng = np.random.default_rng(seed)
    grid = np.linspace(-1.0, 1.0, size)
    v, u = np.meshgrid(grid, grid, indexing="ij")
    softness = 6.0 / size

    ellipses = []
    for value, a, b, x0, y0, theta, c, zc in _BASE_ELLIPSES:
        ellipses.append(
            (
                value * (1.0 + rng.uniform(-0.12, 0.12)),
                a * (1.0 + rng.uniform(-0.08, 0.08)),
                b * (1.0 + rng.uniform(-0.08, 0.08)),
                x0 + rng.uniform(-0.03, 0.03),
                y0 + rng.uniform(-0.03, 0.03),
                theta + rng.uniform(-0.12, 0.12),
                c,
                zc + rng.uniform(-0.05, 0.05),
            )
        )
    # low-order polynomial phase, coefficients shared across the volume
    ph = rng.uniform(-1.0, 1.0, size=6)
    phase = ph[0] * np.pi * 0.5 + 1.2 * (ph[1] * u + ph[2] * v) + 0.8 * (
        ph[3] * u * u + ph[4] * u * v + ph[5] * v * v
    )

    if num_slices == 1:
        zs = np.array([0.0])
    else:
        zs = np.linspace(-0.55, 0.55, num_slices)
    images = np.zeros((num_slices, size, size), dtype=np.complex128)
    for si, z in enumerate(zs):
        mag = np.zeros((size, size))
        for value, a, b, x0, y0, theta, c, zc in ellipses:
            depth = 1.0 - ((z - zc) / c) ** 2
            if depth <= 0:
                continue
            shrink = np.sqrt(depth)
            mag += _ellipse_layer(u, v, value, a * shrink, b * shrink, x0, y0,
                                  theta, softness)
        images[si] = np.clip(mag, 0.0, None) * np.exp(1j * phase)

    coil_maps = make_coil_maps(size, num_coils, seed=seed + 7919)
    meta = {"size": size, "num_slices": num_slices, "num_coils": num_coils, "seed": seed}
    return PhantomVolume(images=images, coil_maps=coil_maps, meta=meta)


# ---------------------------------------------------------------------------
# simulated acquisition


@dataclass(eq=False)
class AcquiredVolume:
    """Masked k-space per slice plus the RSS ground truth magnitudes."""

    kspaces: list  # MultiCoilKSpace per slice
    mask: ksp_mod.SamplingMask
    ground_truth: np.ndarray  # (slices, H, W) real
    meta: dict = field(default_factory=dict)

    @property
    def num_slices(self):
        return len(self.kspaces)


def simulate_acquisition(volume, acceleration, center_fraction, seed=0, exact_mask=False):
    """Image a phantom volume: coil projection, centered FFT, column mask.

    One mask is drawn per volume and shared by all its slices, as on a real
    scanner. Ground truth is the RSS combination of the unmasked coil images.
    """
    size = volume.shape[-1]
    mask = ksp_mod.make_cartesian_mask(size, acceleration, center_fraction, seed,
                                       exact=exact_mask)
    kspaces = []
    gt = np.empty((volume.num_slices,) + volume.shape)
    for si in range(volume.num_slices):
        coils = volume.coil_maps * volume.images[si][None]
        gt[si] = ksp_mod.rss_combine(coils)
        kspaces.append(ksp_mod.apply_mask(fft2c(coils), mask))
    meta = dict(volume.meta)
    meta.update(
        {"acceleration": float(acceleration), "center_fraction": float(center_fraction),
         "mask_seed": int(seed), "exact_mask": bool(exact_mask)}
    )
    return AcquiredVolume(kspaces=kspaces, mask=mask, ground_truth=gt, meta=meta)


# ---------------------------------------------------------------------------
# model-facing sample containers


@dataclass(eq=False)
class SliceAcquisition:
    """One slice's masked k-space with its estimated sensitivities."""

    kspace: ksp_mod.MultiCoilKSpace
    sens: object = None  # SensitivityMaps, None for single coil

    @classmethod
    def from_kspace(cls, ksp):
        sens = None if ksp.num_coils == 1 else ksp_mod.estimate_sensitivities(ksp)
        return cls(kspace=ksp, sens=sens)


@dataclass(eq=False)
class SliceStack:
    """Three adjacent complex slices (previous, center, next).

    Volume edges replicate the center slice outward, so the stack always
    holds exactly three images of one shape.
    """

    images: np.ndarray

    def __post_init__(self):
        images = np.asarray(self.images)
        if images.ndim != 3 or images.shape[0] != 3:
            raise ValueError(f"expected (3, H, W) images, got {images.shape}")
        self.images = images.astype(np.complex128, copy=False)

    @classmethod
    def from_volume(cls, images, index):
        images = np.asarray(images)
        n = images.shape[0]
        if not 0 <= index < n:
            raise ValueError(f"slice {index} out of range for {n} slices")
        prev_i, next_i = max(index - 1, 0), min(index + 1, n - 1)
        return cls(images=np.stack([images[prev_i], images[index], images[next_i]]))


@dataclass(eq=False)
class ReconSample:
    """What a model consumes for one center slice.

    ``acquisitions`` holds 1 (2D) or 3 (2.5D, edge-replicated) per-slice
    acquisitions; targets are RSS magnitudes and may be None at inference.
    """

    acquisitions: tuple
    target: np.ndarray = None
    neighbor_targets: tuple = None
    volume_id: str = ""
    slice_index: int = 0
    acceleration: float = 0.0


def make_samples(acquired, slices=3, volume_id=""):
    """Slice-stack samples for every slice of an acquired volume."""
    if slices not in (1, 3):
        raise ValueError(f"slices must be 1 or 3, got {slices}")
    per_slice = [SliceAcquisition.from_kspace(k) for k in acquired.kspaces]
    n = acquired.num_slices
    gt = acquired.ground_truth
    samples = []
    for j in range(n):
        if slices == 1:
            acqs = (per_slice[j],)
            neighbors = None
        else:
            prev_j, next_j = max(j - 1, 0), min(j + 1, n - 1)
            acqs = (per_slice[prev_j], per_slice[j], per_slice[next_j])
            neighbors = (gt[prev_j], gt[next_j])
        samples.append(
            ReconSample(
                acquisitions=acqs,
                target=gt[j],
                neighbor_targets=neighbors,
                volume_id=volume_id,
                slice_index=j,
                acceleration=acquired.mask.acceleration,
            )
        )
    return samples
