"""Unrolled reconstruction networks built on the autodiff engine.

A model is a fixed number of residual blocks applied to a stack of adjacent
slices held as real channels [re_0, im_0, re_1, im_1, ...]. Each block sees
the current stack plus, for the center slice, three physics side-information
channels (data-consistency residual, phase deviation, background penalty),
pushes them through a small multi-scale encoder with learned soft shrinkage
at every scale, decodes with nearest-neighbor upsampling and skip
connections, and adds the result back onto the stack. With the residual head
zeroed a model is an exact identity on its input.

A hard data-consistency variant (single scale, shared weights, plain ReLU,
scalar threshold) reproduces the classic unrolled ISTA network layout.
"""

from dataclasses import dataclass

import json
import struct

import numpy as np

from . import autodiff as ad
from . import kspace as ksp_mod
from . import priors as priors_mod


class CheckpointError(ValueError):
    pass


CHECKPOINT_MAGIC = b"ACSN"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class BlockSpec:
    scales: int = 3
    kernel: int = 3
    features: int = 8

    def __post_init__(self):
        if self.scales < 1:
            raise ValueError(f"scales must be >= 1, got {self.scales}")
        if self.kernel < 1 or self.kernel % 2 != 1:
            raise ValueError(f"kernel must be odd and >= 1, got {self.kernel}")
        if self.features < 1:
            raise ValueError(f"features must be >= 1, got {self.features}")


@dataclass(frozen=True)
class ModelConfig:
    blocks: tuple = (
        BlockSpec(3, 3, 8),
        BlockSpec(2, 3, 16),
        BlockSpec(3, 3, 8),
        BlockSpec(2, 3, 16),
        BlockSpec(3, 3, 8),
    )
    slices: int = 3
    use_priors: bool = True
    hard_dc_input: bool = False
    dc_rho: float = 1.0
    lrelu_slope: float = 0.01
    per_channel_thresholds: bool = True
    shared_weights: bool = False
    init_threshold: float = 1e-3
    dtype: str = "float32"

    def __post_init__(self):
        if self.slices not in (1, 3):
            raise ValueError(f"slices must be 1 or 3, got {self.slices}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        if self.shared_weights and len(set(self.blocks)) > 1:
            raise ValueError("shared_weights requires identical block specs")
        if self.hard_dc_input and self.use_priors:
            raise ValueError("hard_dc_input and use_priors are mutually exclusive")

    @property
    def state_channels(self):
        return 2 * self.slices

    @property
    def in_channels(self):
        return self.state_channels + (5 if self.use_priors else 0)

    @property
    def real_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    @property
    def complex_dtype(self):
        return np.complex64 if self.dtype == "float32" else np.complex128

    def to_dict(self):
        return {
            "blocks": [
                {"scales": b.scales, "kernel": b.kernel, "features": b.features}
                for b in self.blocks
            ],
            "slices": self.slices,
            "use_priors": self.use_priors,
            "hard_dc_input": self.hard_dc_input,
            "dc_rho": self.dc_rho,
            "lrelu_slope": self.lrelu_slope,
            "per_channel_thresholds": self.per_channel_thresholds,
            "shared_weights": self.shared_weights,
            "init_threshold": self.init_threshold,
            "dtype": self.dtype,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["blocks"] = tuple(BlockSpec(**b) for b in d["blocks"])
        return cls(**d)


def istanet_plus_config(num_blocks=5, features=32, kernel=3, dc_rho=1.0,
                        dtype="float32"):
    """The classic unrolled-ISTA baseline layout.

    Single-scale transform pair shared across blocks, hard data-consistency
    gradient step as the block input, plain ReLU, one scalar threshold.
    """
    return ModelConfig(
        blocks=(BlockSpec(scales=1, kernel=kernel, features=features),) * num_blocks,
        slices=1,
        use_priors=False,
        hard_dc_input=True,
        dc_rho=dc_rho,
        lrelu_slope=0.0,
        per_channel_thresholds=False,
        shared_weights=True,
        dtype=dtype,
    )


# ---------------------------------------------------------------------------
# parameters


def _scale_features(spec):
    return [spec.features * 2 ** s for s in range(spec.scales)]


class ReconBlockParams:
    """One block's tensors. Declaration order (the checkpoint order) is:
    per scale going down (conv_a w/b, conv_b w/b, threshold), then per scale
    going back up (conv_a w/b, conv_b w/b), then the residual head w/b.
    """

    def __init__(self, spec, in_channels, out_channels, per_channel, init_threshold,
                 rng, dtype):
        feats = _scale_features(spec)
        k = spec.kernel

        def conv(c_in, c_out, zero=False):
            shape = (c_out, c_in, k, k)
            if zero:
                w = np.zeros(shape, dtype=dtype)
            else:
                bound = 1.0 / np.sqrt(c_in * k * k)
                w = rng.uniform(-bound, bound, size=shape).astype(dtype)
            return ad.parameter(w), ad.parameter(np.zeros(c_out, dtype=dtype))

        raw0 = float(np.log(np.expm1(init_threshold)))
        self.spec = spec
        self.enc = []
        self.thresholds = []
        for s in range(spec.scales):
            c_in = in_channels if s == 0 else feats[s - 1]
            self.enc.append((conv(c_in, feats[s]), conv(feats[s], feats[s])))
            t_shape = (1, feats[s], 1, 1) if per_channel else (1, 1, 1, 1)
            self.thresholds.append(ad.parameter(np.full(t_shape, raw0, dtype=dtype)))
        self.dec = [None] * spec.scales
        for s in range(spec.scales - 1, -1, -1):
            c_in = feats[s] if s == spec.scales - 1 else feats[s + 1] + feats[s]
            self.dec[s] = (conv(c_in, feats[s]), conv(feats[s], feats[s]))
        self.head = conv(feats[0], out_channels, zero=True)

    def tensors(self):
        out = []
        for s in range(self.spec.scales):
            (aw, ab), (bw, bb) = self.enc[s]
            out += [aw, ab, bw, bb, self.thresholds[s]]
        for s in range(self.spec.scales - 1, -1, -1):
            (aw, ab), (bw, bb) = self.dec[s]
            out += [aw, ab, bw, bb]
        out += [self.head[0], self.head[1]]
        return out


# ---------------------------------------------------------------------------
# batched sample constants


class SampleBatch:
    """Numpy constants for a batch of slice-stack samples with one geometry.

    Samples are objects with ``acquisitions`` (tuple of per-slice items
    carrying ``kspace`` and ``sens``), an optional ``target`` magnitude for
    the center slice, and optional ``neighbor_targets``.
    """

    def __init__(self, samples, config):
        if not samples:
            raise ValueError("empty batch")
        rdt, cdt = config.real_dtype, config.complex_dtype
        slices = config.slices
        if any(len(s.acquisitions) != slices for s in samples):
            raise ValueError(f"every sample must carry {slices} slice acquisitions")

        center = slices // 2
        first = samples[0].acquisitions[center].kspace
        n = len(samples)
        q = first.num_coils
        h, w = first.shape
        self.size = n
        self.shape = (h, w)

        x0 = np.empty((n, 2 * slices, h, w), dtype=rdt)
        self.y = []
        self.mask = []
        self.maps = []
        for j in range(slices):
            yj = np.empty((n, q, h, w), dtype=cdt)
            mj = np.empty((n, 1, 1, w), dtype=rdt)
            sj = np.empty((n, q, h, w), dtype=cdt) if q > 1 else None
            for i, sample in enumerate(samples):
                acq = sample.acquisitions[j]
                ksp = acq.kspace
                if ksp.num_coils != q or ksp.shape != (h, w):
                    raise ValueError("mixed geometries in one batch")
                yj[i] = ksp.planes
                mj[i, 0, 0] = ksp.mask.keep
                sens = acq.sens
                if q > 1:
                    if sens is None:
                        sens = ksp_mod.estimate_sensitivities(ksp)
                    sj[i] = sens.maps
                z = ksp_mod.zero_filled_recon(ksp, sens)
                x0[i, 2 * j] = z.real.astype(rdt)
                x0[i, 2 * j + 1] = z.imag.astype(rdt)
            self.y.append(yj)
            self.mask.append(mj)
            self.maps.append(sj)
        self.x0 = x0
        self.center = center

        if config.use_priors:
            phase_ref = np.empty((n, h, w), dtype=cdt)
            bg_scale = np.empty((n, h, w), dtype=rdt)
            for i, sample in enumerate(samples):
                acq = sample.acquisitions[center]
                sens = acq.sens if q > 1 else None
                lpf = priors_mod.combined_lowpass(acq.kspace, sens)
                denom = priors_mod._floored_magnitude(lpf)
                phase_ref[i] = np.conj(lpf) / denom
                bg_scale[i] = 1.0 / denom
            self.phase_ref = phase_ref
            self.bg_scale = bg_scale

        targets = [getattr(s, "target", None) for s in samples]
        if all(t is not None for t in targets):
            self.targets = np.stack([np.asarray(t, dtype=rdt) for t in targets])
        else:
            self.targets = None
        neighbors = [getattr(s, "neighbor_targets", None) for s in samples]
        if slices == 3 and all(nb is not None for nb in neighbors):
            self.neighbor_targets = (
                np.stack([np.asarray(nb[0], dtype=rdt) for nb in neighbors]),
                np.stack([np.asarray(nb[1], dtype=rdt) for nb in neighbors]),
            )
        else:
            self.neighbor_targets = None


# ---------------------------------------------------------------------------
# the model


class UnrolledModel:
    def __init__(self, config, seed=0):
        self.config = config
        rng = np.random.default_rng(seed)
        count = min(1, len(config.blocks)) if config.shared_weights else len(config.blocks)
        self.param_blocks = [
            ReconBlockParams(
                config.blocks[i],
                config.in_channels,
                config.state_channels,
                config.per_channel_thresholds,
                config.init_threshold,
                rng,
                config.real_dtype,
            )
            for i in range(count)
        ]

    @property
    def num_blocks(self):
        return len(self.config.blocks)

    def block_params(self, i):
        return self.param_blocks[0 if self.config.shared_weights else i]

    def parameters(self):
        out = []
        for block in self.param_blocks:
            out += block.tensors()
        return out

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def zero_heads(self):
        """Zero every block's residual head, making the model an identity."""
        for block in self.param_blocks:
            block.head[0].data[:] = 0
            block.head[1].data[:] = 0

    def set_dtype(self, dtype):
        """Switch parameter precision (e.g. float64 for gradient checking)."""
        self.config = ModelConfig.from_dict({**self.config.to_dict(), "dtype": dtype})
        for p in self.parameters():
            p.data = p.data.astype(self.config.real_dtype)

    # -- forward ------------------------------------------------------------

    def _check_geometry(self, batch):
        h, w = batch.shape
        depth = max((b.scales for b in self.config.blocks), default=1)
        div = 2 ** (depth - 1)
        if h % div or w % div:
            raise ValueError(
                f"image size {h}x{w} not divisible by {div} (needed for {depth} scales)"
            )

    def _slice_complex(self, x, j):
        return ad.make_complex(x[:, 2 * j], x[:, 2 * j + 1])

    def _complex_channels(self, z, n, h, w):
        return [
            ad.reshape(ad.real(z), (n, 1, h, w)),
            ad.reshape(ad.imag(z), (n, 1, h, w)),
        ]

    def _apply_forward_op(self, z, batch, j):
        n, (h, w) = batch.size, batch.shape
        coils = ad.reshape(z, (n, 1, h, w))
        if batch.maps[j] is not None:
            coils = ad.mul(coils, batch.maps[j])
        return ad.mul(ad.fft2c(coils), batch.mask[j])

    def _apply_adjoint_op(self, k, batch, j):
        imgs = ad.ifft2c(ad.mul(k, batch.mask[j]))
        if batch.maps[j] is None:
            return imgs[:, 0]
        return ad.sum_axis(ad.mul(imgs, np.conj(batch.maps[j])), 1)

    def _dc_residual_image(self, z, batch, j):
        k = self._apply_forward_op(z, batch, j)
        return self._apply_adjoint_op(ad.sub(k, batch.y[j]), batch, j)

    def _block_input(self, x, batch):
        cfg = self.config
        n, (h, w) = batch.size, batch.shape
        if cfg.hard_dc_input:
            chans = []
            for j in range(cfg.slices):
                z = self._slice_complex(x, j)
                r = ad.sub(z, ad.mul(self._dc_residual_image(z, batch, j), cfg.dc_rho))
                chans += self._complex_channels(r, n, h, w)
            r_state = ad.concat(chans, axis=1)
            return r_state, r_state
        if not cfg.use_priors:
            return x, x
        z = self._slice_complex(x, batch.center)
        e_dc = self._dc_residual_image(z, batch, batch.center)
        e_phase = ad.imag(ad.mul(z, batch.phase_ref))
        e_bg = ad.mul(z, batch.bg_scale)
        chans = (
            [x]
            + self._complex_channels(e_dc, n, h, w)
            + [ad.reshape(e_phase, (n, 1, h, w))]
            + self._complex_channels(e_bg, n, h, w)
        )
        return ad.concat(chans, axis=1), x

    def _block_net(self, inp, params, bypass_threshold=False):
        slope = self.config.lrelu_slope
        scales = params.spec.scales
        skips = []
        h = inp
        for s in range(scales):
            (aw, ab), (bw, bb) = params.enc[s]
            h = ad.conv2d(h, aw, ab)
            h = ad.leaky_relu(h, slope)
            h = ad.conv2d(h, bw, bb)
            if bypass_threshold:
                skips.append(h)
            else:
                lam = ad.softplus(params.thresholds[s])
                skips.append(ad.soft_shrink(h, lam))
            if s < scales - 1:
                h = ad.maxpool2(h)
        d = skips[-1]
        for s in range(scales - 1, -1, -1):
            if s < scales - 1:
                d = ad.concat([ad.upsample_nearest2(d), skips[s]], axis=1)
            (aw, ab), (bw, bb) = params.dec[s]
            d = ad.conv2d(d, aw, ab)
            d = ad.leaky_relu(d, slope)
            d = ad.conv2d(d, bw, bb)
        return ad.conv2d(d, params.head[0], params.head[1])

    def forward_batch(self, batch, record=False):
        """Run all blocks; returns the final state tensor (N, 2*slices, H, W).

        With ``record`` True also returns a per-block trace of the tensors
        each block consumed and produced.
        """
        self._check_geometry(batch)
        x = ad.as_tensor(batch.x0)
        trace = []
        for i in range(self.num_blocks):
            params = self.block_params(i)
            inp, base = self._block_input(x, batch)
            out = self._block_net(inp, params)
            x = ad.add(base, out)
            if record:
                trace.append({"input": inp, "base": base, "out": out, "state": x})
        if record:
            return x, trace
        return x

    def center_complex(self, x, batch):
        return self._slice_complex(x, batch.center)

    # -- symmetry regularizer -----------------------------------------------

    def _discrepancy_from_trace(self, trace, batch):
        total = None
        for i, step in enumerate(trace):
            d = self._block_net(step["input"], self.block_params(i), bypass_threshold=True)
            diff = ad.sub(d, step["base"])
            term = ad.mul(ad.tsum(ad.mul(diff, diff)), 1.0 / batch.size)
            total = term if total is None else ad.add(total, term)
        return ad.mul(total, 1.0 / len(trace))

    def discrepancy(self, batch):
        """Mean over blocks of per-sample ||decode(encode(x_i)) - x_i||_2^2
        with thresholding bypassed."""
        _, trace = self.forward_batch(batch, record=True)
        return self._discrepancy_from_trace(trace, batch)


# ---------------------------------------------------------------------------
# public single-sample ops


def model_forward(model, sample):
    """Reconstruct one slice-stack sample; returns the complex center slice."""
    batch = SampleBatch([sample], model.config)
    with ad.no_grad():
        x = model.forward_batch(batch)
        z = model.center_complex(x, batch)
    return z.data[0]


def block_forward(model, block_index, stack, priors=None):
    """Apply one block to a complex slice stack (slices, H, W).

    ``priors`` is a PriorBundle for the center slice; required when the model
    was built with physics channels, ignored otherwise. For hard-dc models
    the caller passes the already dc-stepped stack.
    """
    cfg = model.config
    stack = np.asarray(stack, dtype=cfg.complex_dtype)
    if stack.ndim != 3 or stack.shape[0] != cfg.slices:
        raise ValueError(f"expected ({cfg.slices}, H, W) stack, got {stack.shape}")
    _, h, w = stack.shape
    chans = np.empty((1, cfg.state_channels, h, w), dtype=cfg.real_dtype)
    chans[0, 0::2] = stack.real
    chans[0, 1::2] = stack.imag
    pieces = [chans]
    if cfg.use_priors:
        if priors is None:
            raise ValueError("this model needs a PriorBundle")
        extra = np.empty((1, 5, h, w), dtype=cfg.real_dtype)
        extra[0, 0] = priors.e_dc.real
        extra[0, 1] = priors.e_dc.imag
        extra[0, 2] = priors.e_phase
        extra[0, 3] = priors.e_background.real
        extra[0, 4] = priors.e_background.imag
        pieces.append(extra)
    inp = np.concatenate(pieces, axis=1)
    with ad.no_grad():
        out = model._block_net(ad.as_tensor(inp), model.block_params(block_index))
    new = chans + out.data
    return new[0, 0::2] + 1j * new[0, 1::2]


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, extra=None):
    """ACSN checkpoint: magic, version byte, JSON architecture descriptor,
    then every parameter as little-endian float32 in declaration order."""
    descriptor = {"config": model.config.to_dict(), "extra": extra or {}}
    desc_bytes = json.dumps(descriptor).encode("utf-8")
    params = model.parameters()
    count = sum(p.data.size for p in params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<B", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(desc_bytes)))
        fh.write(desc_bytes)
        fh.write(struct.pack("<Q", count))
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f4").tobytes())


def load_checkpoint(path, dtype=None):
    """Rebuild a model from an ACSN file; returns (model, extra_dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {blob[:4]!r}, expected {CHECKPOINT_MAGIC!r}")
    version = blob[4]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (desc_len,) = struct.unpack_from("<I", blob, 5)
    desc_end = 9 + desc_len
    try:
        descriptor = json.loads(blob[9:desc_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CheckpointError(f"unreadable architecture descriptor: {err}") from err
    (count,) = struct.unpack_from("<Q", blob, desc_end)
    data_start = desc_end + 8
    expected = data_start + 4 * count
    if len(blob) < expected:
        raise CheckpointError(
            f"truncated parameter blob: file has {len(blob)} bytes, needs {expected}"
        )
    values = np.frombuffer(blob, dtype="<f4", count=count, offset=data_start)

    config = ModelConfig.from_dict(descriptor["config"])
    if dtype is not None:
        config = ModelConfig.from_dict({**config.to_dict(), "dtype": dtype})
    model = UnrolledModel(config, seed=0)
    params = model.parameters()
    if sum(p.data.size for p in params) != count:
        raise CheckpointError(
            f"parameter count {count} does not match architecture "
            f"({sum(p.data.size for p in params)} expected)"
        )
    pos = 0
    for p in params:
        n = p.data.size
        p.data = values[pos:pos + n].reshape(p.data.shape).astype(config.real_dtype)
        pos += n
    return model, descriptor.get("extra", {})
