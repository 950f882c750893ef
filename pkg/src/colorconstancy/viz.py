"""Figures: raw-pixel probe weights, per-layer bar chart, learning curves."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.colors import rgb_to_hsv  # noqa: E402

from .model import IMAGE_SHAPE  # noqa: E402

# metadata pinned so identical inputs give identical files
_PNG_META = {"Software": None}


def weight_images(weight: np.ndarray, symmetric: bool = False) -> np.ndarray:
    """Per-class probe weights (classes, 3072) as RGB tiles (classes, 32, 32, 3) in [0, 1].

    One affine map is shared by all tiles: the global [min, max] goes to [0, 1]
    (or [-m, m] with m = max |w| when ``symmetric``); a constant input maps to
    mid-gray.
    """
    w = np.asarray(weight, dtype=np.float64)
    width = int(np.prod(IMAGE_SHAPE))
    if w.ndim != 2 or w.shape[1] != width:
        raise ValueError(f"raw-pixel probe weights must be (classes, {width}), got {w.shape}")
    tiles = w.reshape(len(w), *IMAGE_SHAPE).transpose(0, 2, 3, 1)
    if symmetric:
        lo, hi = -np.abs(w).max(), np.abs(w).max()
    else:
        lo, hi = w.min(), w.max()
    if hi - lo <= 0:
        return np.full(tiles.shape, 0.5)
    return (tiles - lo) / (hi - lo)


def weight_hue(weight_rgb: np.ndarray, mask: np.ndarray | None = None) -> float | None:
    """Circular mean hue (fraction of the circle) of the positive part of one class's weights.

    ``weight_rgb`` is (32, 32, 3); ``mask`` optionally restricts the pixels
    (e.g. to the object). Each pixel's clipped weight triple gives a hue,
    weighted by its chroma; None when no pixel has chroma.
    """
    if mask is not None:
        weight_rgb = weight_rgb[mask]
    pos = np.clip(weight_rgb, 0, None).reshape(-1, 3)
    chroma = pos.max(axis=1) - pos.min(axis=1)
    if chroma.sum() <= 0:
        return None
    scale = pos.max()
    hue = rgb_to_hsv(pos / scale)[:, 0]
    ang = 2 * np.pi * hue
    c, s = (chroma * np.cos(ang)).sum(), (chroma * np.sin(ang)).sum()
    return float((np.arctan2(s, c) / (2 * np.pi)) % 1.0)


def hue_error_deg(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return 360.0 * min(d, 1.0 - d)


def hue_alignment(weight: np.ndarray, object_hues, mask: np.ndarray | None = None,
                  tolerance_deg: float = 60.0) -> dict:
    """Fraction of classes whose weight hue lies within ``tolerance_deg`` of the object hue.

    ``mask`` selects the pixels that enter the hue estimate (the object region
    by convention; the surrounding floor carries the complementary hue).
    """
    w = np.asarray(weight, dtype=np.float64)
    tiles = w.reshape(len(w), *IMAGE_SHAPE).transpose(0, 2, 3, 1)
    errors = []
    for tile, target in zip(tiles, object_hues):
        h = weight_hue(tile, mask)
        errors.append(180.0 if h is None else hue_error_deg(h, target))
    errors = np.array(errors)
    return {"fraction": float(np.mean(errors <= tolerance_deg)), "errors_deg": errors.tolist(),
            "tolerance_deg": tolerance_deg}


def save_weight_montage(weight: np.ndarray, albedos, path: str | Path, cols: int = 10,
                        symmetric: bool = False) -> Path:
    """Grid of weight tiles, each underlined with the true object color."""
    tiles = weight_images(weight, symmetric)
    n = len(tiles)
    rows = -(-n // cols)
    fig, axes = plt.subplots(rows, cols, figsize=(cols * 1.0, rows * 1.15), squeeze=False)
    for k, ax in enumerate(axes.flat):
        ax.axis("off")
        if k >= n:
            continue
        ax.imshow(tiles[k], interpolation="nearest", extent=(0, 32, 0, 32))
        ax.add_patch(plt.Rectangle((0, -5), 32, 3, color=np.clip(albedos[k], 0, 1), clip_on=False))
        ax.set_xlim(0, 32)
        ax.set_ylim(-6, 32)
    fig.tight_layout(pad=0.3)
    path = Path(path)
    fig.savefig(path, dpi=80, metadata=_PNG_META)
    plt.close(fig)
    return path


def save_layer_bars(summary: dict, path: str | Path, layers, jitter: tuple[float, float] | None = None,
                    chance: dict | None = None) -> Path:
    """Mean test accuracy ± sd per layer for both tasks; optional jitter-baseline bar at h.

    ``summary[(layer, task)] = (mean, sd)``.
    """
    layers = list(layers)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    xs = np.arange(len(layers))
    for off, task, color in ((-0.2, "object", "tab:blue"), (0.2, "lighting", "tab:gray")):
        vals = [summary.get((l, task), (np.nan, 0.0)) for l in layers]
        ax.bar(xs + off, [v[0] for v in vals], 0.38, yerr=[v[1] for v in vals], color=color, label=task,
               capsize=3)
    if jitter is not None and "h" in layers:
        i = layers.index("h")
        ax.bar(i - 0.2, jitter[0], 0.18, yerr=jitter[1], color="tab:red", label="jitter (object)", capsize=3)
    for task, level in (chance or {}).items():
        ax.axhline(level, ls=":", lw=0.8, color="k")
    ax.set_xticks(xs, layers)
    ax.set_ylabel("test accuracy")
    ax.set_ylim(0, 1)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def save_learning_curve(rows: list[dict], path: str | Path, raw_pixel: float | None = None,
                        supervised: list[dict] | None = None, task: str = "object") -> Path:
    """Mean ± sd accuracy against epoch per layer; raw-pixel accuracy as a dotted line,
    the supervised baseline dashed."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for layer in sorted({r["layer"] for r in rows if r["task"] == task}):
        sel = sorted((r for r in rows if r["task"] == task and r["layer"] == layer), key=lambda r: r["epoch"])
        ep = np.array([r["epoch"] for r in sel])
        m = np.array([r["mean"] for r in sel])
        sd = np.array([r["sd"] for r in sel])
        line, = ax.plot(ep, m, "-", label=f"{layer} (temporal)")
        ax.fill_between(ep, m - sd, m + sd, color=line.get_color(), alpha=0.25)
    if supervised:
        sel = sorted((r for r in supervised if r["task"] == task), key=lambda r: r["epoch"])
        ep = np.array([r["epoch"] for r in sel])
        m = np.array([r["mean"] for r in sel])
        sd = np.array([r["sd"] for r in sel])
        line, = ax.plot(ep, m, "--", label="supervised")
        ax.fill_between(ep, m - sd, m + sd, color=line.get_color(), alpha=0.2)
    if raw_pixel is not None:
        ax.axhline(raw_pixel, ls=":", color="k", label="raw pixels")
    ax.set_xlabel("epoch")
    ax.set_ylabel(f"{task} test accuracy")
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path
