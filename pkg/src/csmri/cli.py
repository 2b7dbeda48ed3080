"""Command line interface: simulate, recon, train, eval.

Datasets live in plain directories: one subdirectory per volume holding the
ground truth magnitudes, per-slice masked k-space containers, and a meta.json
with the mask. Every subcommand takes --config pointing at a JSON file whose
keys override the equivalent flags, so runs are reproducible from a single
file. Exit code 0 means every requested output was written; 2 means bad
arguments; 1 means a runtime failure.
"""

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import kspace as ksp_mod
from . import metrics as metrics_mod
from . import network as net_mod
from . import sparsity as sp_mod
from . import training as train_mod
from .data import make_phantom, simulate_acquisition, make_samples, AcquiredVolume
from .tensorio import save_tensor, load_tensor, export_image


class UsageError(ValueError):
    pass


def _apply_config_file(args, parser):
    """Overlay --config JSON values onto parsed args (config wins)."""
    if not getattr(args, "config", None):
        return args
    with open(args.config) as fh:
        overrides = json.load(fh)
    valid = set(vars(args))
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if attr not in valid:
            parser.error(f"unknown config key {key!r} for this command")
        setattr(args, attr, value)
    return args


def _volume_dirs(data_dir):
    out = sorted(
        d for d in os.listdir(data_dir)
        if os.path.isdir(os.path.join(data_dir, d)) and d.startswith("vol")
    )
    if not out:
        raise UsageError(f"no volume directories under {data_dir}")
    return out


def load_acquired_volume(vol_dir):
    """Read one simulated volume back from disk."""
    with open(os.path.join(vol_dir, "meta.json")) as fh:
        meta = json.load(fh)
    mask = ksp_mod.SamplingMask.from_json(json.dumps(meta["mask"]))
    gt = load_tensor(os.path.join(vol_dir, "gt.acst"))
    kspaces = []
    for si in range(gt.shape[0]):
        planes = load_tensor(os.path.join(vol_dir, f"kspace_s{si:03d}.acst"))
        kspaces.append(ksp_mod.MultiCoilKSpace(planes=planes, mask=mask))
    return AcquiredVolume(kspaces=kspaces, mask=mask, ground_truth=np.asarray(gt),
                          meta=meta.get("phantom", {}))


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args):
    os.makedirs(args.out, exist_ok=True)
    accelerations = [float(a) for a in str(args.accel).split(",")]
    index = []
    for vi in range(args.volumes):
        vol = make_phantom(args.size, num_slices=args.slices, num_coils=args.coils,
                           seed=args.seed + vi)
        for accel in accelerations:
            acq = simulate_acquisition(
                vol, accel, args.center_frac,
                seed=args.seed + 1000 * vi + int(accel), exact_mask=args.exact_mask,
            )
            name = f"vol{vi:03d}_r{accel:g}" if len(accelerations) > 1 else f"vol{vi:03d}"
            vol_dir = os.path.join(args.out, name)
            os.makedirs(vol_dir, exist_ok=True)
            save_tensor(os.path.join(vol_dir, "gt.acst"), acq.ground_truth)
            for si, k in enumerate(acq.kspaces):
                save_tensor(os.path.join(vol_dir, f"kspace_s{si:03d}.acst"), k.planes)
            meta = {
                "mask": json.loads(acq.mask.to_json()),
                "phantom": acq.meta,
            }
            with open(os.path.join(vol_dir, "meta.json"), "w") as fh:
                json.dump(meta, fh, indent=2)
            index.append(name)
    with open(os.path.join(args.out, "dataset.json"), "w") as fh:
        json.dump(
            {
                "volumes": index,
                "size": args.size,
                "slices": args.slices,
                "coils": args.coils,
                "accelerations": accelerations,
                "center_fraction": args.center_frac,
                "seed": args.seed,
                "exact_mask": bool(args.exact_mask),
            },
            fh,
            indent=2,
        )
    print(f"wrote {len(index)} volumes to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# recon


def _recon_volume_zf(acq):
    return np.stack([np.abs(ksp_mod.zero_filled_recon(k)) for k in acq.kspaces])


def _recon_volume_ista(acq, args, trace_dir=None, name=""):
    cfg = sp_mod.IstaConfig(iterations=args.iters, rho=args.rho, lam=args.lam,
                            levels=args.levels, fista=args.fista)
    out = []
    for si, k in enumerate(acq.kspaces):
        result = sp_mod.ista_solve(k, cfg)
        out.append(np.abs(result.image))
        if trace_dir is not None:
            sp_mod.write_objective_trace(
                os.path.join(trace_dir, f"objective_{name}_s{si:03d}.csv"),
                result.objective_trace,
            )
    return np.stack(out)


def _recon_volume_model(acq, model):
    samples = make_samples(acq, slices=model.config.slices)
    return np.stack([np.abs(net_mod.model_forward(model, s)) for s in samples])


def cmd_recon(args):
    if args.method == "unrolled" and not args.checkpoint:
        raise UsageError("--method unrolled needs --checkpoint")
    os.makedirs(args.out, exist_ok=True)
    model = None
    if args.method == "unrolled":
        model, _ = net_mod.load_checkpoint(args.checkpoint, dtype=args.precision)

    names = _volume_dirs(args.data)
    acquired = [load_acquired_volume(os.path.join(args.data, n)) for n in names]

    def run_one(item):
        name, acq = item
        if args.method == "zf":
            return _recon_volume_zf(acq)
        if args.method == "ista":
            return _recon_volume_ista(acq, args,
                                      trace_dir=args.out if args.trace else None,
                                      name=name)
        return _recon_volume_model(acq, model)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            recons = list(pool.map(run_one, zip(names, acquired)))
    else:
        recons = [run_one(item) for item in zip(names, acquired)]

    rows = []
    for name, acq, recon in zip(names, acquired, recons):
        save_tensor(os.path.join(args.out, f"recon_{name}.acst"), recon)
        data_range = float(acq.ground_truth.max())
        for si in range(recon.shape[0]):
            rows.append(
                metrics_mod.score_slice(recon[si], acq.ground_truth[si], name,
                                        acq.mask.acceleration, si,
                                        data_range=data_range)
            )
            if args.png:
                export_image(
                    os.path.join(args.out, f"recon_{name}_s{si:03d}.png"),
                    recon[si], window=(0.0, data_range),
                )
    metrics_mod.write_metrics_csv(os.path.join(args.out, "metrics.csv"), rows)
    metrics_mod.write_metrics_json(os.path.join(args.out, "metrics.json"), rows)
    mean_ssim = float(np.mean([r.ssim for r in rows]))
    print(f"reconstructed {len(names)} volumes ({args.method}), mean ssim {mean_ssim:.4f}")
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args):
    if args.train_config:
        with open(args.train_config) as fh:
            config = train_mod.TrainConfig.from_json(fh.read())
    else:
        config = train_mod.TrainConfig()
    for key in ("epochs", "batch", "lr", "seed"):
        value = getattr(args, key)
        if value is not None:
            setattr(config, key, value)

    names = _volume_dirs(args.data)
    samples = []
    for name in names:
        acq = load_acquired_volume(os.path.join(args.data, name))
        samples.extend(make_samples(acq, slices=config.slices, volume_id=name))

    step_offset = 0
    if args.resume:
        model, prev_extra = net_mod.load_checkpoint(args.resume, dtype=config.precision)
        if model.config.slices != config.slices:
            raise UsageError("resumed checkpoint disagrees with config on slices")
        # keep the global step count monotone across resumed runs
        step_offset = int(prev_extra.get("steps", 0))
    else:
        model = train_mod.build_model(config)
    history = train_mod.train(model, samples, config)
    for row in history:
        row["step"] += step_offset
    net_mod.save_checkpoint(args.out, model,
                            extra={"train_config": json.loads(config.to_json()),
                                   "steps": step_offset + len(history)})
    if args.loss_history:
        train_mod.write_loss_history(args.loss_history, history)
    final = history[-1]["loss"] if history else float("nan")
    print(f"trained {config.epochs} epochs on {len(samples)} samples, "
          f"final batch loss {final:.6f}, checkpoint {args.out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args):
    names = _volume_dirs(args.data)
    rows = []
    for name in names:
        acq = load_acquired_volume(os.path.join(args.data, name))
        recon_path = os.path.join(args.recon, f"recon_{name}.acst")
        if not os.path.exists(recon_path):
            raise UsageError(f"missing reconstruction {recon_path}")
        recon = np.asarray(load_tensor(recon_path))
        if recon.shape != acq.ground_truth.shape:
            raise UsageError(
                f"{recon_path}: shape {recon.shape} does not match ground truth "
                f"{acq.ground_truth.shape}"
            )
        data_range = float(acq.ground_truth.max())
        for si in range(recon.shape[0]):
            rows.append(
                metrics_mod.score_slice(recon[si], acq.ground_truth[si], name,
                                        acq.mask.acceleration, si,
                                        data_range=data_range)
            )
    if args.out:
        metrics_mod.write_metrics_csv(args.out, rows)
    summary = metrics_mod.aggregate_metrics(rows)
    header = f"{'volume':<16}{'accel':>7}{'slices':>8}{'nmse':>12}{'psnr':>10}{'ssim':>9}{'msssim':>9}"
    print(header)
    for g in summary:
        print(
            f"{g['dataset']:<16}{g['acceleration']:>7g}{g['slices']:>8d}"
            f"{g['nmse']:>12.5f}{g['psnr']:>10.3f}{g['ssim']:>9.4f}{g['msssim']:>9.4f}"
        )
    overall = {
        "nmse": float(np.mean([r.nmse for r in rows])),
        "psnr": float(np.mean([r.psnr for r in rows])),
        "ssim": float(np.mean([r.ssim for r in rows])),
        "msssim": float(np.mean([r.msssim for r in rows])),
    }
    print(
        f"{'overall':<16}{'':>7}{len(rows):>8d}{overall['nmse']:>12.5f}"
        f"{overall['psnr']:>10.3f}{overall['ssim']:>9.4f}{overall['msssim']:>9.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="csmri",
        description="Compressed-sensing MRI simulation, reconstruction, and training",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic undersampled volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--volumes", type=int, default=1)
    p.add_argument("--slices", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--coils", type=int, default=2)
    p.add_argument("--accel", default="4", help="acceleration factor(s), comma separated")
    p.add_argument("--center-frac", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exact-mask", action="store_true",
                   help="keep exactly round(width/accel) columns")
    p.add_argument("--config", help="JSON file overriding these flags")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("recon", help="reconstruct a simulated dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--method", choices=("zf", "ista", "unrolled"), default="zf")
    p.add_argument("--checkpoint", help="ACSN checkpoint (unrolled method)")
    p.add_argument("--iters", type=int, default=300)
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--fista", action="store_true")
    p.add_argument("--trace", action="store_true",
                   help="write per-slice ISTA objective traces")
    p.add_argument("--png", action="store_true", help="also export PNG previews")
    p.add_argument("--precision", choices=("float32", "float64"), default="float32")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--config", help="JSON file overriding these flags")
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("train", help="train an unrolled model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.add_argument("--train-config", help="JSON TrainConfig file")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--loss-history", help="CSV path for per-step losses")
    p.add_argument("--config", help="JSON file overriding these flags")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score reconstructions against ground truth")
    p.add_argument("--data", required=True)
    p.add_argument("--recon", required=True, help="directory from csmri recon")
    p.add_argument("--out", help="aggregate CSV path")
    p.add_argument("--config", help="JSON file overriding these flags")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config_file(args, parser)
        return args.func(args)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
