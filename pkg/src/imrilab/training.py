"""Loss functions, discriminator, and the adversarial training loop.

The generator objective combines a normalized image-domain error, an
unnormalized frequency-domain squared error, a perceptual distance through a
frozen random-kernel feature extractor, and a non-saturating adversarial
term.  Training alternates one discriminator step with one generator step and
is exactly deterministic given the seed.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kspace, simdata
from .autodiff import (
    Tensor,
    add,
    backward,
    clamp,
    conv2d,
    constant,
    fft2_2ch,
    hadamard,
    leaky_relu,
    log,
    mean_all,
    save_checkpoint,
    load_checkpoint,
    assign_parameters,
    scale,
    sigmoid,
    sqrt,
    sub,
    sum_all,
    complex_to_channels,
)
from .network import ConvLR, ModelConfig, suggested_alpha, _conv_param
from .simdata import frame_trajectory


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    image: float = 60.0
    frequency: float = 30.0
    perceptual: float = 0.01

    def __post_init__(self):
        if self.image < 0 or self.frequency < 0 or self.perceptual < 0:
            raise ValueError("loss weights must be non-negative")


# ---------------------------------------------------------------------------
# loss terms


def _as_tensor(x):
    return x if isinstance(x, Tensor) else constant(x)


def loss_imse(x_rec, x_gt, squared=False):
    """Normalized image-domain error ``||rec - gt||_2 / ||gt||_2``.

    The printed (unsquared) ratio is the default; ``squared=True`` selects
    the squared variant.
    """
    x_rec = _as_tensor(x_rec)
    gt = np.asarray(x_gt, dtype=np.float64)
    denom = float(np.linalg.norm(gt))
    if denom == 0.0:
        raise ValueError("ground truth has zero norm")
    diff = sub(x_rec, constant(gt))
    sq = sum_all(hadamard(diff, diff))
    if squared:
        return scale(sq, 1.0 / denom**2)
    return scale(sqrt(sq), 1.0 / denom)


def loss_fmse(x_rec, x_gt):
    """Frequency-domain squared error with the unnormalized forward DFT.

    By Parseval this equals ``N * ||rec - gt||_2^2`` with N the pixel count.
    """
    x_rec = _as_tensor(x_rec)
    diff = sub(x_rec, constant(np.asarray(x_gt, dtype=np.float64)))
    spec = fft2_2ch(diff)
    return sum_all(hadamard(spec, spec))


class FeatureExtractor:
    """Frozen 3-layer random-kernel conv stack used by the perceptual loss.

    Kernels are drawn once from a fixed seed and never trained, which keeps
    the loss deterministic while still comparing images in a feature space.
    """

    DEFAULT_SEED = 90210

    def __init__(self, seed=DEFAULT_SEED, channels=(8, 16, 16)):
        rng = np.random.default_rng([int(seed), 7])
        widths = [2] + list(channels)
        self.convs = []
        for i, (cin, cout) in enumerate(zip(widths, widths[1:])):
            conv = _conv_param(rng, cout, cin, 3, name=f"feat.{i}")
            conv.kernel.requires_grad = False
            conv.bias.requires_grad = False
            self.convs.append(conv)

    def features(self, x):
        out = _as_tensor(x)
        strides = (2, 2, 1)
        for conv, stride in zip(self.convs, strides):
            out = leaky_relu(conv2d(out, conv.kernel, conv.bias, stride=stride, padding=1))
        return out


def loss_perceptual(x_rec, x_gt, extractor):
    """Squared l2 distance between frozen feature maps; zero iff they match."""
    f_rec = extractor.features(_as_tensor(x_rec))
    f_gt = extractor.features(constant(np.asarray(x_gt, dtype=np.float64)))
    diff = sub(f_rec, f_gt)
    return sum_all(hadamard(diff, diff))


def loss_gen(d_of_rec):
    """Non-saturating generator term ``-log D(x_rec)`` with a finite guard."""
    return scale(log(clamp(_as_tensor(d_of_rec), 1e-7, 1.0 - 1e-7)), -1.0)


def loss_total(parts, weights=LossWeights(), use_discriminator=True):
    """Weighted sum of the four generator loss terms.

    ``parts`` maps ``image`` / ``frequency`` / ``perceptual`` / ``adversarial``
    to scalar tensors; the adversarial term is omitted when the discriminator
    is disabled.
    """
    total = scale(parts["image"], weights.image)
    total = add(total, scale(parts["frequency"], weights.frequency))
    total = add(total, scale(parts["perceptual"], weights.perceptual))
    if use_discriminator:
        total = add(total, parts["adversarial"])
    return total


# ---------------------------------------------------------------------------
# discriminator


class Discriminator:
    """Strided conv stack ending in a sigmoid probability that the input is real."""

    def __init__(self, convs):
        self.convs = convs

    @classmethod
    def initialize(cls, seed=0, channels=(8, 16, 16)):
        rng = np.random.default_rng([int(seed), 11])
        widths = [2] + list(channels) + [1]
        convs = []
        for i, (cin, cout) in enumerate(zip(widths, widths[1:])):
            convs.append(_conv_param(rng, cout, cin, 3, name=f"disc.{i}"))
        return cls(convs)

    def named_parameters(self):
        out = {}
        for conv in self.convs:
            out[conv.kernel.name] = conv.kernel
            out[conv.bias.name] = conv.bias
        return out

    def forward(self, x):
        out = _as_tensor(x)
        for conv in self.convs[:-1]:
            out = leaky_relu(conv2d(out, conv.kernel, conv.bias, stride=2, padding=1))
        last = self.convs[-1]
        out = conv2d(out, last.kernel, last.bias, stride=1, padding=1)
        return sigmoid(mean_all(out))


def discriminator_forward(disc, x):
    return disc.forward(x)


def discriminator_loss(disc, real_2ch, fake_2ch):
    """Standard binary cross-entropy: label 1 for real, 0 for reconstructed."""
    d_real = clamp(disc.forward(constant(real_2ch)), 1e-7, 1.0 - 1e-7)
    d_fake = clamp(disc.forward(constant(fake_2ch)), 1e-7, 1.0 - 1e-7)
    term_real = scale(log(d_real), -1.0)
    term_fake = scale(log(sub(constant(np.asarray(1.0)), d_fake)), -1.0)
    return add(term_real, term_fake)


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adam with decoupled per-parameter moments; consumes and clears grads."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = {name: np.zeros_like(p.values) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.values) for name, p in self.params.items()}

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name] = b1 * self._m[name] + (1 - b1) * g
            v = self._v[name] = b2 * self._v[name] + (1 - b2) * g * g
            m_hat = m / (1 - b1**self.t)
            v_hat = v / (1 - b2**self.t)
            p.values = p.values - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
            p.grad = None


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    steps: int = 300
    lr_generator: float = 1e-4
    lr_discriminator: float = 1e-4
    batch_size: int = 1
    seed: int = 0
    n_frames: int = 5
    spoke_counts: tuple = (8,)
    use_discriminator: bool = True
    use_initializer: bool = True
    mask_lstm: bool = False
    checkpoint_interval: int = 0  # 0 -> final checkpoint only
    early_stop_window: int = 100
    early_stop_rel: float = 1e-3
    weights: LossWeights = field(default_factory=LossWeights)
    squared_image_loss: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.n_frames < 1:
            raise ValueError("steps, batch_size, and n_frames must be >= 1")
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")
        if not self.spoke_counts or any(int(s) < 1 for s in self.spoke_counts):
            raise ValueError("spoke_counts must be non-empty and positive")
        self.spoke_counts = tuple(int(s) for s in self.spoke_counts)

    def to_json(self):
        obj = asdict(self)
        obj["spoke_counts"] = list(self.spoke_counts)
        obj["weights"] = asdict(self.weights)
        obj["model"] = self.model.to_json()
        return obj


class _SequenceCache:
    """Lazily loaded, memoized training inputs per (sequence, spoke count)."""

    def __init__(self, dataset_dir, manifest, n_frames):
        self.dataset_dir = dataset_dir
        self.manifest = manifest
        self.n_frames = n_frames
        self.entries = [e for e in manifest["sequences"] if e["split"] == "train"]
        if not self.entries:
            raise TrainingError("dataset has no training split")
        self._images = {}
        self._kspace = {}

    def images(self, idx):
        if idx not in self._images:
            entry = self.entries[idx]
            ref, frames = simdata.load_sequence_images(self.dataset_dir, entry, self.n_frames)
            gt_2ch = [complex_to_channels(f) for f in frames]
            self._images[idx] = (ref, frames, gt_2ch)
        return self._images[idx]

    def acquisitions(self, idx, n_spokes):
        key = (idx, n_spokes)
        if key not in self._kspace:
            entry = self.entries[idx]
            y_frames = simdata.load_sequence_kspace(self.dataset_dir, entry, n_spokes, self.n_frames)
            ref, _, _ = self.images(idx)
            shape = ref.shape
            x_uni = [kspace.regrid_reconstruct(y, shape=shape) for y in y_frames]
            self._kspace[key] = (y_frames, x_uni)
        return self._kspace[key]


def generator_losses(model, cfg, extractor, disc, y_frames, x_uni, ref, gt_2ch):
    """Forward one sequence and build all per-sequence loss terms."""
    recs = model.forward(
        y_frames,
        ref,
        mask_lstm=cfg.mask_lstm,
        use_initializer=cfg.use_initializer,
        x_uni=x_uni,
    )
    n = float(len(recs))
    parts = {}

    def fold(key, term):
        parts[key] = term if key not in parts else add(parts[key], term)

    for rec, gt in zip(recs, gt_2ch):
        fold("image", loss_imse(rec, gt, squared=cfg.squared_image_loss))
        fold("frequency", loss_fmse(rec, gt))
        fold("perceptual", loss_perceptual(rec, gt, extractor))
        if cfg.use_discriminator:
            fold("adversarial", loss_gen(disc.forward(rec)))
    for key in parts:
        parts[key] = scale(parts[key], 1.0 / n)
    return recs, parts


def train(dataset_dir, cfg, out_dir):
    """Run the adversarial training loop; returns a summary dict.

    Writes ``final.ckpt`` (+ a JSON sidecar with the architecture), periodic
    checkpoints when configured, and an append-only ``metrics.jsonl`` log with
    one record per step.  Aborts on a non-finite loss with the offending step
    recorded in the log.
    """
    dataset_dir = Path(dataset_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = simdata.load_manifest(dataset_dir)
    ds_cfg = manifest["config"]
    if cfg.n_frames > int(ds_cfg["n_frames"]):
        raise TrainingError(
            f"requested {cfg.n_frames} frames but dataset stores {ds_cfg['n_frames']}"
        )
    for s in cfg.spoke_counts:
        if s not in tuple(ds_cfg["spoke_counts"]):
            raise TrainingError(f"spoke count {s} not present in dataset {tuple(ds_cfg['spoke_counts'])}")

    cache = _SequenceCache(dataset_dir, manifest, cfg.n_frames)
    size = int(ds_cfg["size"])
    traj0 = frame_trajectory(
        cfg.spoke_counts[0], int(ds_cfg["n_readout"]), 0, bool(ds_cfg["spoke_continuation"])
    )
    alpha0 = suggested_alpha(traj0, (size, size))
    model = ConvLR.initialize(cfg.model, seed=cfg.seed, alpha_init=alpha0)
    extractor = FeatureExtractor()
    disc = Discriminator.initialize(seed=cfg.seed) if cfg.use_discriminator else None

    g_params = model.named_parameters()
    adam_g = Adam(g_params, lr=cfg.lr_generator)
    adam_d = Adam(disc.named_parameters(), lr=cfg.lr_discriminator) if disc else None

    rng = np.random.default_rng([int(cfg.seed), 3])
    log_path = out / "metrics.jsonl"
    totals = []
    stopped_at = None
    with open(log_path, "w") as log_fh:
        for step in range(cfg.steps):
            n_spokes = cfg.spoke_counts[step % len(cfg.spoke_counts)]
            idxs = rng.integers(0, len(cache.entries), size=cfg.batch_size)

            batch = []
            for idx in idxs:
                ref, _, gt_2ch = cache.images(int(idx))
                y_frames, x_uni = cache.acquisitions(int(idx), n_spokes)
                recs, parts = generator_losses(model, cfg, extractor, disc, y_frames, x_uni, ref, gt_2ch)
                batch.append((recs, parts, gt_2ch))

            d_loss_val = 0.0
            if disc is not None:
                d_terms = None
                count = 0
                for recs, _, gt_2ch in batch:
                    for rec, gt in zip(recs, gt_2ch):
                        term = discriminator_loss(disc, gt, rec.values)
                        d_terms = term if d_terms is None else add(d_terms, term)
                        count += 1
                d_loss = scale(d_terms, 1.0 / count)
                backward(d_loss)
                adam_d.step()
                d_loss_val = float(d_loss.values)

            g_total = None
            part_vals = {"image": 0.0, "frequency": 0.0, "perceptual": 0.0, "adversarial": 0.0}
            for recs, parts, _ in batch:
                term = loss_total(parts, cfg.weights, cfg.use_discriminator)
                g_total = term if g_total is None else add(g_total, term)
                for key, value in parts.items():
                    part_vals[key] += float(value.values) / len(batch)
            g_loss = scale(g_total, 1.0 / len(batch))
            g_val = float(g_loss.values)

            record = {
                "step": step,
                "spokes": int(n_spokes),
                "loss_total": g_val,
                "loss_image": part_vals["image"],
                "loss_frequency": part_vals["frequency"],
                "loss_perceptual": part_vals["perceptual"],
                "loss_adversarial": part_vals["adversarial"],
                "loss_discriminator": d_loss_val,
                "time": time.time(),
            }
            if not math.isfinite(g_val):
                record["event"] = "non_finite_loss"
                log_fh.write(json.dumps(record) + "\n")
                raise TrainingError(f"non-finite generator loss at step {step}")
            log_fh.write(json.dumps(record) + "\n")

            backward(g_loss)
            adam_g.step()

            totals.append(g_val)
            if cfg.checkpoint_interval and (step + 1) % cfg.checkpoint_interval == 0:
                _save_model(out / f"step_{step + 1:06d}.ckpt", model, cfg)
            w = cfg.early_stop_window
            if w and len(totals) >= 2 * w:
                recent = float(np.mean(totals[-w:]))
                previous = float(np.mean(totals[-2 * w : -w]))
                if previous > 0 and (previous - recent) / abs(previous) < cfg.early_stop_rel:
                    stopped_at = step
                    break

    final = out / "final.ckpt"
    _save_model(final, model, cfg)
    return {
        "checkpoint": str(final),
        "log": str(log_path),
        "steps_run": len(totals),
        "early_stopped_at": stopped_at,
        "final_loss": totals[-1] if totals else None,
    }


def _save_model(path, model, cfg):
    path = Path(path)
    save_checkpoint(path, model.named_parameters())
    sidecar = {
        "format_version": 1,
        "model": model.config.to_json(),
        "training": cfg.to_json() if cfg is not None else None,
    }
    with open(path.with_suffix(".json"), "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(checkpoint_path):
    """Rebuild a :class:`ConvLR` from a checkpoint + its JSON sidecar."""
    path = Path(checkpoint_path)
    with open(path.with_suffix(".json")) as fh:
        sidecar = json.load(fh)
    config = ModelConfig.from_json(sidecar["model"])
    model = ConvLR.initialize(config, seed=0, alpha_init=0.0)
    assign_parameters(model.named_parameters(), load_checkpoint(path))
    return model, sidecar
