"""Frozen-encoder linear readouts for object identity and lighting."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .dataset import DatasetArrays
from .engine import Adam, Tensor, affine, bce_with_logits, load_checkpoint, no_grad, sigmoid, \
    softmax_cross_entropy
from .model import LAYERS, Network

log = logging.getLogger(__name__)

TASKS = ("object", "lighting")
CHANCE = {"object": 1 / 50, "lighting": 1 / 8}


@dataclass
class ProbeConfig:
    epochs: int = 200
    batch_size: int = 600
    lr: float = 1e-3


@dataclass
class FeatureMatrix:
    layer: str
    split: str
    values: np.ndarray  # (frames, width) float32
    index: np.ndarray  # global frame indices

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass
class LinearProbe:
    weight: np.ndarray  # (classes, width)
    bias: np.ndarray
    task: str
    layer: str
    seed: int
    train_loss: list[float]

    def logits(self, features: np.ndarray) -> np.ndarray:
        return features @ self.weight.T + self.bias


def load_network(checkpoint: str | Path | Network) -> Network:
    if isinstance(checkpoint, Network):
        return checkpoint
    ck = load_checkpoint(checkpoint)
    return Network(ck.params, trainable=False)


def extract_features(checkpoint, layer: str, data: DatasetArrays, split: str | None = None,
                     index: np.ndarray | None = None, batch: int = 1000) -> FeatureMatrix:
    """Features of one layer for a split (or explicit frame indices), in frame order.

    Layer ``x`` is the raw stored pixel values, flattened.
    """
    if layer not in LAYERS:
        raise ValueError(f"unknown layer {layer!r}; valid layers: {', '.join(LAYERS)}")
    if index is None:
        index = data.indices(split) if split else np.arange(len(data.object_id))
    if layer == "x":
        return FeatureMatrix(layer, split or "custom", data.pixels(index).reshape(len(index), -1), index)
    net = load_network(checkpoint)
    chunks = []
    with no_grad():
        for start in range(0, len(index), batch):
            acts = net.forward(data.pixels(index[start:start + batch]), with_projection=(layer == "z"))
            chunks.append(acts.features(layer).astype(np.float32))
    return FeatureMatrix(layer, split or "custom", np.concatenate(chunks), index)


def task_targets(data: DatasetArrays, index: np.ndarray, task: str) -> np.ndarray:
    if task == "object":
        return np.eye(data.n_objects, dtype=np.float32)[data.object_id[index]]
    if task == "lighting":
        return data.labels[index].astype(np.float32)
    raise ValueError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")


def train_linear_probe(features: np.ndarray, targets: np.ndarray, task: str, seed: int = 0,
                       cfg: ProbeConfig | None = None, layer: str = "") -> LinearProbe:
    """Single affine map trained with AdaM; softmax CE for objects, BCE for lighting bits."""
    cfg = cfg or ProbeConfig()
    if len(features) != len(targets):
        raise ValueError(f"{len(features)} feature rows but {len(targets)} labels")
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; valid tasks: {', '.join(TASKS)}")
    x = np.asarray(features, dtype=np.float32)
    y = np.asarray(targets, dtype=np.float32)
    n, width = x.shape
    w = Tensor(np.zeros((y.shape[1], width), dtype=np.float32), requires_grad=True)
    b = Tensor(np.zeros(y.shape[1], dtype=np.float32), requires_grad=True)
    opt = Adam([w, b], lr=cfg.lr)
    gen = rng.generator(seed, rng.STREAM_PROBE, TASKS.index(task))
    loss_fn = softmax_cross_entropy if task == "object" else bce_with_logits
    history = []
    for _ in range(cfg.epochs):
        perm = gen.permutation(n)
        total, steps = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss = loss_fn(affine(Tensor(x[idx]), w, b), y[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
            steps += 1
        history.append(total / steps)
    return LinearProbe(w.data, b.data, task, layer, seed, history)


def accuracy_from_logits(logits: np.ndarray, targets: np.ndarray, task: str) -> float:
    """Object: argmax equals the class. Lighting: a spotlight counts iff all 3 thresholded bits match;
    accuracy averages over spotlights and frames."""
    if task == "object":
        truth = targets.argmax(axis=1) if targets.ndim == 2 else targets
        return float(np.mean(logits.argmax(axis=1) == truth))
    pred = sigmoid(logits) > 0.5
    truth = np.asarray(targets) > 0.5
    match = (pred == truth).reshape(len(pred), -1, 3).all(axis=2)
    return float(match.mean())


def evaluate_probe(probe: LinearProbe, features: np.ndarray, targets: np.ndarray) -> float:
    return accuracy_from_logits(probe.logits(np.asarray(features, dtype=np.float32)), targets, probe.task)


@dataclass
class ProbeResult:
    layer: str
    task: str
    seed: int
    train: float
    val: float
    test: float
    probe: LinearProbe | None = None


def run_probe(checkpoint, data: DatasetArrays, layer: str, task: str, seed: int,
              cfg: ProbeConfig | None = None, features: dict | None = None) -> ProbeResult:
    """Extract train/val/test features, fit on train, report all three accuracies.

    ``features`` may hold pre-extracted matrices keyed by split.
    """
    feats = features or {s: extract_features(checkpoint, layer, data, s) for s in ("train", "val", "test")}
    probe = train_linear_probe(feats["train"].values, task_targets(data, feats["train"].index, task),
                               task, seed, cfg, layer)
    acc = {s: evaluate_probe(probe, feats[s].values, task_targets(data, feats[s].index, task))
           for s in ("train", "val", "test")}
    log.info("probe %s/%s seed %d: test %.4f", layer, task, seed, acc["test"])
    return ProbeResult(layer, task, seed, acc["train"], acc["val"], acc["test"], probe)
