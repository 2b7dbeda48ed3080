"""Image quality metrics and the training losses built from them.

Every similarity function here accepts either plain ndarrays (returning a
float) or autodiff Tensors for the reconstruction argument (returning a
scalar Tensor), so the exact same SSIM/MS-SSIM code scores reconstructions
and drives training.

Conventions: SSIM uses a 7x7 uniform window, population statistics, valid
windows only (no padding), k1=0.01, k2=0.03, and data_range defaulting to
max(target). MS-SSIM uses the Wang et al. exponents (0.0448, 0.2856, 0.3001,
0.2363, 0.1333), truncated and renormalized when fewer scales fit, with 2x2
mean-pool downsampling between scales.
"""

from dataclasses import dataclass, asdict

import csv
import json
import numpy as np

from . import autodiff as ad

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_FLOOR = 1e-12  # keeps fractional powers defined if a cs mean ever hits zero


def _is_tensor(x):
    return isinstance(x, ad.Tensor)


def _mean(x):
    return ad.tmean(x) if _is_tensor(x) else float(np.mean(x))


def _box(x, win):
    if _is_tensor(x):
        return ad.box_mean(x, win)
    view = np.lib.stride_tricks.sliding_window_view(x, (win, win), axis=(-2, -1))
    return view.mean(axis=(-2, -1))


def _floor(x):
    return ad.clamp_min(x, _FLOOR) if _is_tensor(x) else max(x, _FLOOR)


def _down2(x):
    h, w = (x.data.shape if _is_tensor(x) else x.shape)[-2:]
    crop = (..., slice(0, 2 * (h // 2)), slice(0, 2 * (w // 2)))
    if _is_tensor(x):
        return ad.avgpool2(x[crop])
    c = x[crop]
    sh = c.shape
    return c.reshape(sh[:-2] + (sh[-2] // 2, 2, sh[-1] // 2, 2)).mean(axis=(-3, -1))


def _abs(x):
    return ad.abs_real(x) if _is_tensor(x) else np.abs(x)


# ---------------------------------------------------------------------------
# pointwise error metrics


def nmse(recon, target):
    """||r - t||^2 / ||t||^2."""
    recon, target = np.asarray(recon), np.asarray(target)
    denom = float(np.sum(np.abs(target) ** 2))
    if denom == 0:
        raise ValueError("target is all zero, nmse undefined")
    return float(np.sum(np.abs(recon - target) ** 2)) / denom


def psnr(recon, target, data_range=None):
    """10 log10(data_range^2 / MSE); +inf for an exact match."""
    recon, target = np.asarray(recon), np.asarray(target)
    if data_range is None:
        data_range = float(np.max(target))
    mse = float(np.mean(np.abs(recon - target) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(data_range ** 2 / mse)


# ---------------------------------------------------------------------------
# SSIM family


def _ssim_terms(recon, target, window, k1, k2, data_range):
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_r = _box(recon, window)
    mu_t = _box(target, window)
    var_r = _box(recon * recon, window) - mu_r * mu_r
    var_t = _box(target * target, window) - mu_t * mu_t
    cov = _box(recon * target, window) - mu_r * mu_t
    lum = (2.0 * mu_r * mu_t + c1) / (mu_r * mu_r + mu_t * mu_t + c1)
    cs = (2.0 * cov + c2) / (var_r + var_t + c2)
    return lum, cs


def _check_pair(recon, target, window):
    shape = recon.data.shape if _is_tensor(recon) else np.asarray(recon).shape
    tshape = np.asarray(target).shape
    if shape != tshape:
        raise ValueError(f"shape mismatch: {shape} vs {tshape}")
    if window < 1 or window > shape[-1] or window > shape[-2]:
        raise ValueError(f"window {window} does not fit image shape {shape}")


def ssim(recon, target, window=7, k1=0.01, k2=0.03, data_range=None):
    """Mean SSIM over all valid windows (and any leading batch axes)."""
    _check_pair(recon, target, window)
    target = np.asarray(target)
    if data_range is None:
        data_range = float(np.max(target))
    lum, cs = _ssim_terms(recon, target, window, k1, k2, data_range)
    return _mean(lum * cs)


def max_msssim_scales(shape, window=7):
    """Largest scale count whose coarsest image still fits the window."""
    side = min(shape[-2:])
    scales = 0
    while side >= window:
        scales += 1
        side //= 2
    return scales


def msssim(recon, target, window=7, k1=0.01, k2=0.03, data_range=None, scales=5):
    """Multi-scale SSIM, product form.

    Contrast-structure means of the first scales-1 dyadic downsamplings and
    the full SSIM mean at the coarsest, each raised to its Wang weight.
    """
    _check_pair(recon, target, window)
    target = np.asarray(target)
    shape = recon.data.shape if _is_tensor(recon) else np.asarray(recon).shape
    feasible = max_msssim_scales(shape, window)
    if scales < 1 or scales > len(MSSSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(MSSSIM_WEIGHTS)}], got {scales}")
    if scales > feasible:
        raise ValueError(
            f"{scales} scales need min side >= {window * 2 ** (scales - 1)}, "
            f"got shape {shape[-2:]}"
        )
    weights = np.asarray(MSSSIM_WEIGHTS[:scales])
    weights = weights / weights.sum()
    if data_range is None:
        data_range = float(np.max(target))

    total = 1.0
    r, t = recon, target
    for j in range(scales):
        lum, cs = _ssim_terms(r, t, window, k1, k2, data_range)
        base = _mean(lum * cs) if j == scales - 1 else _mean(cs)
        total = total * _floor(base) ** float(weights[j])
        if j < scales - 1:
            r, t = _down2(r), _down2(t)
    return total


# ---------------------------------------------------------------------------
# training losses


def l1_loss(recon, target):
    return _mean(_abs(recon - target))


def mse_loss(recon, target):
    d = recon - target
    return _mean(d * d)


def huber_loss(recon, target, delta=1.0):
    """Quadratic within delta, linear outside.

    Uses huber(d) = 0.5 min(d, delta)^2 + delta (d - min(d, delta)), which
    agrees with the two-branch definition and needs no boolean select.
    """
    if delta <= 0:
        raise ValueError("delta must be > 0")
    d = _abs(recon - target)
    if _is_tensor(d):
        clipped = ad.minimum(d, delta)
        return ad.tmean(0.5 * clipped * clipped + delta * (d - clipped))
    clipped = np.minimum(d, delta)
    return float(np.mean(0.5 * clipped ** 2 + delta * (d - clipped)))


def combined_loss(recon, target, alpha=0.84, window=7, scales=None, data_range=None):
    """alpha * (1 - MS-SSIM) + (1 - alpha) * mean |r - t|.

    ``scales`` None picks the deepest MS-SSIM pyramid the image size allows
    (capped at 5).
    """
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    shape = recon.data.shape if _is_tensor(recon) else np.asarray(recon).shape
    if scales is None:
        scales = min(len(MSSSIM_WEIGHTS), max_msssim_scales(shape, window))
    ms = msssim(recon, target, window=window, scales=scales, data_range=data_range)
    return alpha * (1.0 - ms) + (1.0 - alpha) * l1_loss(recon, target)


def discrepancy_loss(model, batch):
    """Mean over blocks of ||decode(encode(x_i)) - x_i||^2, threshold bypassed.

    Measures how close each block's transform pair is to an identity when the
    shrinkage stage is skipped; used as a symmetry regularizer.
    """
    return model.discrepancy(batch)


# ---------------------------------------------------------------------------
# reporting


@dataclass
class SliceMetrics:
    dataset: str
    acceleration: float
    slice: int
    nmse: float
    psnr: float
    ssim: float
    msssim: float


METRIC_FIELDS = ("dataset", "acceleration", "slice", "nmse", "psnr", "ssim", "msssim")


def score_slice(recon_mag, target_mag, dataset, acceleration, slice_index,
                data_range=None, window=7):
    """All four metrics for one slice, as a report row."""
    scales = min(len(MSSSIM_WEIGHTS), max_msssim_scales(np.asarray(target_mag).shape, window))
    return SliceMetrics(
        dataset=str(dataset),
        acceleration=float(acceleration),
        slice=int(slice_index),
        nmse=nmse(recon_mag, target_mag),
        psnr=psnr(recon_mag, target_mag, data_range=data_range),
        ssim=float(ssim(recon_mag, target_mag, window=window, data_range=data_range)),
        msssim=float(msssim(recon_mag, target_mag, window=window,
                            data_range=data_range, scales=scales)),
    )


def write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRIC_FIELDS)
        for r in rows:
            d = asdict(r)
            writer.writerow(
                [d["dataset"], f"{d['acceleration']:.17g}", d["slice"]]
                + [f"{d[k]:.17g}" for k in ("nmse", "psnr", "ssim", "msssim")]
            )


def write_metrics_json(path, rows):
    with open(path, "w") as fh:
        json.dump([asdict(r) for r in rows], fh, indent=2)


def read_metrics_csv(path):
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            rows.append(
                SliceMetrics(
                    dataset=rec["dataset"],
                    acceleration=float(rec["acceleration"]),
                    slice=int(rec["slice"]),
                    nmse=float(rec["nmse"]),
                    psnr=float(rec["psnr"]),
                    ssim=float(rec["ssim"]),
                    msssim=float(rec["msssim"]),
                )
            )
    return rows


def aggregate_metrics(rows):
    """Mean of each metric grouped by (dataset, acceleration)."""
    groups = {}
    for r in rows:
        groups.setdefault((r.dataset, r.acceleration), []).append(r)
    out = []
    for (dataset, accel), members in sorted(groups.items()):
        out.append(
            {
                "dataset": dataset,
                "acceleration": accel,
                "slices": len(members),
                "nmse": float(np.mean([m.nmse for m in members])),
                "psnr": float(np.mean([m.psnr for m in members])),
                "ssim": float(np.mean([m.ssim for m in members])),
                "msssim": float(np.mean([m.msssim for m in members])),
            }
        )
    return out
