"""Temporal contrastive training and the two baselines.

Three modes share one loop:

* ``ssl``: positives are a training frame and its immediate successor.
* ``jitter``: positives are two color-jittered copies of one evenly lit
  base render (standard SimCLR on the reference images).
* ``supervised``: encoder plus a linear classifier trained with
  cross-entropy on the object id.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from matplotlib.colors import hsv_to_rgb as _hsv_to_rgb, rgb_to_hsv as _rgb_to_hsv

from . import rng
from .dataset import DatasetArrays, split_sizes
from .engine import (Adam, AdamState, Checkpoint, Tensor, cosine_similarity_matrix, mask_diagonal,
                     save_checkpoint, scale, softmax_cross_entropy)
from .model import Network

log = logging.getLogger(__name__)

MODES = ("ssl", "jitter", "supervised")
COLLAPSE_STD = 1e-6


class TrainingError(RuntimeError):
    pass


@dataclass
class SslConfig:
    tau: float = 1.0
    n_pairs: int = 300  # batch holds 2N images
    lr: float = 1e-3
    epochs: int = 100
    seed: int = 0
    d_z: int = 64
    checkpoint_every: int = 10
    with_replacement: bool = False

    def validate(self, train_size: int | None = None) -> None:
        if not self.tau > 0:
            raise ValueError("tau: must be positive")
        if self.n_pairs < 1:
            raise ValueError("n_pairs: must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs: must be >= 0")
        if self.d_z < 1:
            raise ValueError("d_z: must be >= 1")
        if train_size is not None and 2 * self.n_pairs > train_size:
            raise ValueError(f"n_pairs: batch 2N={2 * self.n_pairs} exceeds the training set ({train_size})")


@dataclass
class JitterConfig:
    brightness: float = 0.8
    contrast: float = 0.8
    saturation: float = 0.8
    hue: float = 0.2

    def __post_init__(self):
        if not 0.0 <= self.hue <= 0.5:
            raise ValueError("hue: strength must lie in [0, 0.5]")
        for name in ("brightness", "contrast", "saturation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name}: strength must be non-negative")


# ---------------------------------------------------------------- loss

def nt_xent_tt_loss(z: Tensor, tau: float = 1.0) -> Tensor:
    """Temporal NT-Xent over a batch whose rows i and i+N are positives.

    Row i contributes -log(exp(cos(z_i, z_p)/tau) / sum_{k != i} exp(cos(z_i, z_k)/tau))
    with p its partner; both directions of every pair are included and the
    2N terms are averaged.
    """
    n2 = z.shape[0]
    if n2 < 2 or n2 % 2:
        raise ValueError("nt_xent_tt_loss needs an even batch of at least 2 rows")
    n = n2 // 2
    logits = mask_diagonal(scale(cosine_similarity_matrix(z), 1.0 / tau))
    partner = (np.arange(n2) + n) % n2
    targets = np.zeros((n2, n2), dtype=z.dtype)
    targets[np.arange(n2), partner] = 1
    return softmax_cross_entropy(logits, targets)


# ---------------------------------------------------------------- batches

def eligible_anchors(data: DatasetArrays) -> np.ndarray:
    """Training frames whose successor is also a training frame (global indices)."""
    n_train, _, _ = split_sizes(data.frames_per_object)
    return np.flatnonzero((data.split == 0) & (data.frame < n_train - 1))


@dataclass
class TemporalBatch:
    indices: np.ndarray  # (2N,), rows i and i+N are a frame and its successor

    @property
    def anchors(self) -> np.ndarray:
        return self.indices[: len(self.indices) // 2]


def sample_temporal_batch(eligible: np.ndarray, n_pairs: int, gen: np.random.Generator,
                          replace: bool = False) -> TemporalBatch:
    if not replace and n_pairs > len(eligible):
        raise ValueError(f"n_pairs: {n_pairs} anchors requested, only {len(eligible)} eligible frames")
    anchors = gen.choice(eligible, size=n_pairs, replace=replace)
    return TemporalBatch(np.concatenate([anchors, anchors + 1]))


class EpochSampler:
    """Draws anchors without replacement within an epoch."""

    def __init__(self, eligible: np.ndarray, n_pairs: int, gen: np.random.Generator, replace: bool = False):
        if n_pairs > len(eligible):
            raise ValueError(f"n_pairs: {n_pairs} anchors requested, only {len(eligible)} eligible frames")
        self.eligible, self.n_pairs, self.gen, self.replace = eligible, n_pairs, gen, replace

    def epoch(self, iterations: int):
        if self.replace:
            for _ in range(iterations):
                yield sample_temporal_batch(self.eligible, self.n_pairs, self.gen, replace=True)
            return
        perm = self.gen.permutation(self.eligible)
        for i in range(iterations):
            chunk = perm[i * self.n_pairs:(i + 1) * self.n_pairs]
            if len(chunk) < self.n_pairs:
                perm = self.gen.permutation(self.eligible)
                chunk = perm[: self.n_pairs]
            yield TemporalBatch(np.concatenate([chunk, chunk + 1]))


def iterations_per_epoch(train_size: int, n_pairs: int) -> int:
    return train_size // (2 * n_pairs)


# ---------------------------------------------------------------- color jitter

def _gray(img: np.ndarray) -> np.ndarray:
    return 0.299 * img[0] + 0.587 * img[1] + 0.114 * img[2]


def _adjust_brightness(img, f):
    return np.clip(img * f, 0.0, 1.0)


def _adjust_contrast(img, f):
    mean = _gray(img).mean()
    return np.clip(f * img + (1.0 - f) * mean, 0.0, 1.0)


def _adjust_saturation(img, f):
    g = _gray(img)[None]
    return np.clip(f * img + (1.0 - f) * g, 0.0, 1.0)


def _adjust_hue(img, shift):
    hsv = _rgb_to_hsv(img.transpose(1, 2, 0))
    hsv[..., 0] = (hsv[..., 0] + shift) % 1.0
    return _hsv_to_rgb(hsv).transpose(2, 0, 1)


def jitter_factor_range(strength: float) -> tuple[float, float]:
    return max(0.0, 1.0 - strength), 1.0 + strength


def color_jitter(image: np.ndarray, cfg: JitterConfig, gen: np.random.Generator) -> np.ndarray:
    """Brightness, contrast, saturation and hue jitter in random order; image (3, H, W) in [0, 1]."""
    img = np.asarray(image, dtype=np.float64)
    ops = []
    if cfg.brightness > 0:
        ops.append((_adjust_brightness, gen.uniform(*jitter_factor_range(cfg.brightness))))
    if cfg.contrast > 0:
        ops.append((_adjust_contrast, gen.uniform(*jitter_factor_range(cfg.contrast))))
    if cfg.saturation > 0:
        ops.append((_adjust_saturation, gen.uniform(*jitter_factor_range(cfg.saturation))))
    if cfg.hue > 0:
        ops.append((_adjust_hue, gen.uniform(-cfg.hue, cfg.hue)))
    for i in gen.permutation(len(ops)):
        fn, arg = ops[i]
        img = fn(img, arg)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------- training loop

@dataclass
class RunResult:
    mode: str
    checkpoints: list[Path]
    losses: list[float]  # mean loss per epoch
    collapsed: bool = False
    extra: dict = field(default_factory=dict)


def _checkpoint_name(epoch: int) -> str:
    return f"epoch{epoch:04d}.ckpt"


def _save(out: Path, net: Network, opt: Adam | None, epoch: int, gen: np.random.Generator,
          mode: str, cfg: SslConfig) -> Path:
    path = out / _checkpoint_name(epoch)
    save_checkpoint(path, Checkpoint(net.state(), epoch, opt.state if opt else None,
                                     gen.bit_generator.state, {"mode": mode, "config": asdict(cfg)}))
    return path


def _embedding_std(z: np.ndarray) -> float:
    return float(z.std(axis=0).mean())


def _train_loop(mode: str, out: Path, cfg: SslConfig, train_size: int, batch_fn,
                n_classes: int | None = None, resume: Checkpoint | None = None) -> RunResult:
    """Shared loop. ``batch_fn(gen, iterations)`` yields (images, targets-or-None) per step."""
    out.mkdir(parents=True, exist_ok=True)
    net = Network.initialize(cfg.seed, cfg.d_z, n_classes)
    gen = rng.generator(cfg.seed, rng.STREAM_TRAIN, MODES.index(mode))
    opt = Adam(net.parameters(), lr=cfg.lr)
    start = 0
    if resume is not None:
        for k, v in resume.params.items():
            net[k].data = v.copy()
        opt.state = resume.optimizer
        gen.bit_generator.state = resume.rng_state
        start = resume.epoch
    iters = iterations_per_epoch(train_size, cfg.n_pairs)
    checkpoints = [] if resume else [_save(out, net, opt, 0, gen, mode, cfg)]
    losses: list[float] = []
    collapsed = False
    for epoch in range(start + 1, cfg.epochs + 1):
        total = 0.0
        for images, targets in batch_fn(gen, iters):
            try:
                acts = net.forward(images, with_projection=(mode != "supervised"))
                if mode == "supervised":
                    loss = softmax_cross_entropy(net.classify(acts.h), targets)
                else:
                    loss = nt_xent_tt_loss(acts.z, cfg.tau)
                    if _embedding_std(acts.z.data) < COLLAPSE_STD and not collapsed:
                        collapsed = True
                        log.warning("%s seed %d: embeddings collapsed at epoch %d", mode, cfg.seed, epoch)
                value = loss.item()
            except FloatingPointError:
                value = math.nan
            if not math.isfinite(value):
                _save(out, net, opt, epoch, gen, mode, cfg).rename(out / "diagnostic.ckpt")
                raise TrainingError(f"non-finite loss at epoch {epoch}; wrote {out / 'diagnostic.ckpt'}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += value
        losses.append(total / max(iters, 1))
        log.info("%s seed %d epoch %d loss %.4f", mode, cfg.seed, epoch, losses[-1])
        if epoch % cfg.checkpoint_every == 0 or epoch == cfg.epochs:
            checkpoints.append(_save(out, net, opt, epoch, gen, mode, cfg))
    result = RunResult(mode, checkpoints, losses, collapsed)
    _write_run_manifest(out, result, cfg, start)
    return result


def _write_run_manifest(out: Path, result: RunResult, cfg: SslConfig, start_epoch: int) -> None:
    with open(out / "loss.tsv", "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, v in enumerate(result.losses):
            w.writerow([start_epoch + i + 1, f"{v:.8f}"])
    manifest = {
        "mode": result.mode,
        "config": asdict(cfg),
        "epoch_loss": [round(v, 8) for v in result.losses],
        "checkpoints": [p.name for p in result.checkpoints],
        "collapsed": result.collapsed,
    }
    (out / "run.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def train_ssl(data: DatasetArrays, cfg: SslConfig, out: str | Path, resume: Checkpoint | None = None) -> RunResult:
    """Temporal contrastive training on successive frames of the training split."""
    train_size = int((data.split == 0).sum())
    cfg.validate(train_size)
    eligible = eligible_anchors(data)

    def batches(gen, iters):
        sampler = EpochSampler(eligible, cfg.n_pairs, gen, cfg.with_replacement)
        for b in sampler.epoch(iters):
            yield data.pixels(b.indices), None

    return _train_loop("ssl", Path(out), cfg, train_size, batches, resume=resume)


def jitter_pair_batch(base_srgb: np.ndarray, n_pairs: int, jcfg: JitterConfig, gen: np.random.Generator):
    """Pick N base images with replacement; rows i and i+N are two jitters of the same one."""
    objs = gen.integers(0, len(base_srgb), size=n_pairs)
    first = np.stack([color_jitter(base_srgb[o], jcfg, gen) for o in objs])
    second = np.stack([color_jitter(base_srgb[o], jcfg, gen) for o in objs])
    srgb = np.concatenate([first, second])
    return objs, srgb


def _quantize_pixels(img: np.ndarray) -> np.ndarray:
    # round to 8 bits like a stored image so jittered inputs follow the dataset's pixel law
    return (np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)


def train_jitter_baseline(base_images: np.ndarray, cfg: SslConfig, out: str | Path, train_size: int,
                          jcfg: JitterConfig | None = None) -> RunResult:
    """SimCLR on color-jittered copies of the evenly lit base renders (uint8 sRGB, one per object).

    ``train_size`` sets the iterations per epoch so the step count matches the
    temporal run.
    """
    jcfg = jcfg or JitterConfig()
    cfg.validate()
    base = base_images.astype(np.float64) / 255.0

    def batches(gen, iters):
        for _ in range(iters):
            _, srgb = jitter_pair_batch(base, cfg.n_pairs, jcfg, gen)
            yield _quantize_pixels(srgb), None

    return _train_loop("jitter", Path(out), cfg, train_size, batches)


def train_supervised_baseline(data: DatasetArrays, cfg: SslConfig, out: str | Path) -> RunResult:
    """Encoder plus linear classifier trained end-to-end on object ids, same hyperparameters."""
    train_idx = data.indices("train")
    cfg.validate(len(train_idx))
    eye = np.eye(data.n_objects, dtype=np.float32)

    def batches(gen, iters):
        perm = gen.permutation(train_idx)
        bs = 2 * cfg.n_pairs
        for i in range(iters):
            idx = perm[i * bs:(i + 1) * bs]
            yield data.pixels(idx), eye[data.object_id[idx]]

    return _train_loop("supervised", Path(out), cfg, len(train_idx), batches, n_classes=data.n_objects)


def train(mode: str, data: DatasetArrays | None, cfg: SslConfig, out: str | Path,
          base_images: np.ndarray | None = None, train_size: int | None = None) -> RunResult:
    if mode == "ssl":
        return train_ssl(data, cfg, out)
    if mode == "supervised":
        return train_supervised_baseline(data, cfg, out)
    if mode == "jitter":
        size = train_size if train_size is not None else int((data.split == 0).sum())
        return train_jitter_baseline(base_images, cfg, out, size)
    raise ValueError(f"mode: unknown training mode {mode!r}; choose from {MODES}")
