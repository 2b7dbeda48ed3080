"""Training loop for the unrolled models.

Small-scale by design: full dataset in memory, seeded shuffling, exponential
learning-rate decay per epoch, loss on the center slice magnitude with
optional down-weighted neighbor terms. Single-threaded numpy keeps runs
bit-reproducible for a fixed config.
"""

from dataclasses import dataclass, asdict

import csv
import json

import numpy as np

from . import autodiff as ad
from . import metrics as metrics_mod
from .network import BlockSpec, ModelConfig, SampleBatch, UnrolledModel, model_forward
from .optim import make_optimizer

LOSS_NAMES = ("combined", "l1", "mse", "huber", "ssim", "msssim")


def _cycle(value, n):
    if isinstance(value, (list, tuple)):
        return tuple(value[i % len(value)] for i in range(n))
    return (value,) * n


@dataclass
class TrainConfig:
    """Everything a training run needs; JSON round-trippable.

    ``scales``, ``features`` and ``kernel`` may be single ints or short
    patterns cycled across blocks ([3, 2] with 5 blocks alternates).
    """

    blocks: int = 5
    scales: object = (3, 2)
    features: object = (8, 16)
    kernel: object = 3
    lr: float = 1e-4
    decay: float = 0.95
    epochs: int = 30
    batch: int = 8
    seed: int = 0
    alpha: float = 0.84
    optimizer: str = "radam"
    neighbor_loss_weight: float = 0.0
    slices: int = 3
    use_priors: bool = True
    loss: str = "combined"
    sigma: float = 0.0
    precision: str = "float32"
    init_threshold: float = 1e-3

    def __post_init__(self):
        for name in ("blocks", "epochs", "batch", "seed", "slices"):
            if not isinstance(getattr(self, name), int):
                raise ValueError(f"{name} must be an integer")
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch < 1:
            raise ValueError("batch must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must be in (0, 1]")
        if self.loss not in LOSS_NAMES:
            raise ValueError(f"loss must be one of {LOSS_NAMES}, got {self.loss!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if self.neighbor_loss_weight < 0:
            raise ValueError("neighbor_loss_weight must be >= 0")

    def model_config(self):
        scales = _cycle(self.scales, self.blocks)
        features = _cycle(self.features, self.blocks)
        kernels = _cycle(self.kernel, self.blocks)
        specs = tuple(
            BlockSpec(scales=s, kernel=k, features=f)
            for s, k, f in zip(scales, kernels, features)
        )
        return ModelConfig(
            blocks=specs,
            slices=self.slices,
            use_priors=self.use_priors,
            dtype=self.precision,
            init_threshold=self.init_threshold,
        )

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys: {sorted(unknown)}")
        for key in ("scales", "features", "kernel"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)


def build_model(config, seed=None):
    """Fresh model for a training config (seeded from the config by default)."""
    return UnrolledModel(config.model_config(), seed=config.seed if seed is None else seed)


def _loss_term(name, recon_mag, target, alpha):
    if name == "combined":
        return metrics_mod.combined_loss(recon_mag, target, alpha=alpha)
    if name == "l1":
        return metrics_mod.l1_loss(recon_mag, target)
    if name == "mse":
        return metrics_mod.mse_loss(recon_mag, target)
    if name == "huber":
        return metrics_mod.huber_loss(recon_mag, target)
    if name == "ssim":
        return 1.0 - metrics_mod.ssim(recon_mag, target)
    if name == "msssim":
        return 1.0 - metrics_mod.msssim(
            recon_mag,
            target,
            scales=min(
                len(metrics_mod.MSSSIM_WEIGHTS),
                metrics_mod.max_msssim_scales(np.asarray(target).shape),
            ),
        )
    raise ValueError(f"unknown loss {name!r}")


def batch_loss(model, batch, config):
    """Scalar loss tensor for one batch (center slice, optional extras)."""
    if batch.targets is None:
        raise ValueError("samples need targets to train on")
    need_trace = config.sigma > 0
    if need_trace:
        x, trace = model.forward_batch(batch, record=True)
    else:
        x = model.forward_batch(batch)
    z = model.center_complex(x, batch)
    loss = _loss_term(config.loss, ad.magnitude(z), batch.targets, config.alpha)
    w = config.neighbor_loss_weight
    if w > 0 and config.slices == 3:
        if batch.neighbor_targets is None:
            raise ValueError("neighbor_loss_weight > 0 needs neighbor targets")
        for j, target in zip((0, 2), batch.neighbor_targets):
            zj = model._slice_complex(x, j)
            loss = loss + w * _loss_term(config.loss, ad.magnitude(zj), target,
                                         config.alpha)
    if need_trace:
        loss = loss + config.sigma * model._discrepancy_from_trace(trace, batch)
    return loss


def train(model, samples, config):
    """Optimize the model in place; returns one history row per step.

    Rows are dicts with epoch, step, lr, and the batch loss. History length
    is epochs * ceil(len(samples) / batch).
    """
    samples = list(samples)
    if not samples:
        raise ValueError("no training samples")
    if config.slices != model.config.slices:
        raise ValueError("config.slices does not match the model")
    rng = np.random.default_rng(config.seed)
    opt = make_optimizer(config.optimizer, model.parameters(), config.lr)
    history = []
    step = 0
    for epoch in range(config.epochs):
        opt.lr = config.lr * config.decay ** epoch
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), config.batch):
            chunk = [samples[i] for i in order[start:start + config.batch]]
            batch = SampleBatch(chunk, model.config)
            loss = batch_loss(model, batch, config)
            opt.zero_grad()
            ad.backward(loss)
            opt.step()
            history.append(
                {
                    "epoch": epoch,
                    "step": step,
                    "lr": opt.lr,
                    "loss": float(loss.data),
                }
            )
            step += 1
    return history


def write_loss_history(path, history):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "epoch", "lr", "loss"])
        for row in history:
            writer.writerow(
                [row["step"], row["epoch"], f"{row['lr']:.17g}", f"{row['loss']:.17g}"]
            )


def evaluate_ssim(model, samples, data_range=None):
    """Mean SSIM of model reconstructions against sample targets."""
    scores = []
    for sample in samples:
        recon = np.abs(model_forward(model, sample))
        scores.append(
            float(metrics_mod.ssim(recon, sample.target, data_range=data_range))
        )
    return float(np.mean(scores))
