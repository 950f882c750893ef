"""End-to-end runs: dataset, the three training modes per seed, probes, figures and report."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .dataset import DatasetArrays, generate_dataset, load_arrays, render_base_images
from .probe import CHANCE, run_probe
from .renderer import calibrate_exposure, object_mask
from .report import (ProbeRecord, ProbeReport, _round, classifier_accuracy, compare, learning_curve,
                     probe_checkpoint, write_curve_table)
from .trainer import train_jitter_baseline, train_ssl, train_supervised_baseline
from .viz import hue_alignment, save_layer_bars, save_learning_curve, save_weight_montage

log = logging.getLogger(__name__)


def file_sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_run_manifest(out: Path, cfg: RunConfig | None, seed: int | None, artifacts, started: float,
                       argv: list[str] | None = None) -> Path:
    """Provenance record: command line, configuration, seed, checksums, timestamps, version."""
    out = Path(out)
    entries = {}
    for p in sorted({Path(a) for a in artifacts}):
        if p.is_file():
            entries[str(p.relative_to(out) if p.is_relative_to(out) else p)] = file_sha256(p)
    manifest = {
        "command": list(sys.argv if argv is None else argv),
        "config": cfg.to_dict() if cfg is not None else None,
        "seed": seed,
        "artifacts": entries,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "software_version": __version__,
    }
    path = out / "run_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def ensure_dataset(cfg: RunConfig, path: Path) -> DatasetArrays:
    """Generate the dataset unless a complete copy already exists at ``path``."""
    if not (path / "dataset.toml").exists() or (path / ".incomplete").exists():
        generate_dataset(path, cfg.build_scene(), cfg.dataset_seed, cfg.frames_per_object,
                         cfg.render_settings(), cfg.render_mode)
    return load_arrays(path)


def base_images(cfg: RunConfig) -> np.ndarray:
    """Evenly lit reference renders of every object, the color-jitter baseline's inputs."""
    scene = cfg.build_scene()
    settings = cfg.render_settings()
    exposure = calibrate_exposure(scene, settings)
    return render_base_images(scene, settings, exposure)


def train_all(cfg: RunConfig, data: DatasetArrays, out: Path, seeds) -> dict:
    """The three training modes for every seed; returns {mode: {seed: RunResult}}."""
    train_size = len(data.indices("train"))
    base = base_images(cfg)
    runs = {"ssl": {}, "jitter": {}, "supervised": {}}
    for seed in seeds:
        tc = dataclasses.replace(cfg.train, seed=seed)
        runs["ssl"][seed] = train_ssl(data, tc, out / "runs" / f"ssl_seed{seed}")
        runs["jitter"][seed] = train_jitter_baseline(base, tc, out / "runs" / f"jitter_seed{seed}", train_size,
                                                     cfg.jitter)
        runs["supervised"][seed] = train_supervised_baseline(data, tc, out / "runs" / f"supervised_seed{seed}")
    return runs


def probe_all(cfg: RunConfig, data: DatasetArrays, runs: dict) -> ProbeReport:
    records: list[ProbeRecord] = []
    for seed, res in sorted(runs["ssl"].items()):
        ck = res.checkpoints[-1]
        records += probe_checkpoint(ck, data, cfg.layers, cfg.tasks, seed, cfg.probe, "ssl")
    for seed, res in sorted(runs["jitter"].items()):
        # lighting is constant in the jitter baseline's inputs, so only objects are probed
        records += probe_checkpoint(res.checkpoints[-1], data, ("h",), ("object",), seed, cfg.probe, "jitter")
    report = ProbeReport(records)
    compare(report)
    return report


def supervised_curve(runs: dict, data: DatasetArrays) -> list[dict]:
    per: dict[int, list[float]] = {}
    for seed, res in sorted(runs.items()):
        for ck in res.checkpoints:
            epoch = int(ck.stem.replace("epoch", ""))
            per.setdefault(epoch, []).append(classifier_accuracy(ck, data))
    rows = []
    for epoch, accs in sorted(per.items()):
        a = np.array(accs)
        rows.append({"epoch": epoch, "layer": "h", "task": "object", "mean": _round(a.mean()),
                     "sd": _round(a.std(ddof=1) if len(a) > 1 else 0.0), "n": len(a)})
    return rows


def weight_figure(cfg: RunConfig, data: DatasetArrays, out: Path, seed: int) -> dict:
    """Raw-pixel object probe: weight montage plus the hue-alignment score."""
    scene = cfg.build_scene()
    r = run_probe(None, data, "x", "object", seed, cfg.probe)
    np.save(out / "x_probe_weights.npy", r.probe.weight)
    save_weight_montage(r.probe.weight, [c.albedo_rgb for c in scene.palette], out / "weights_montage.png")
    ha = hue_alignment(r.probe.weight, [c.hue for c in scene.palette], object_mask(scene))
    ha["errors_deg"] = [_round(e) for e in ha["errors_deg"]]
    ha["fraction"] = _round(ha["fraction"])
    ha["probe_seed"] = seed
    return ha


def reproduce_all(cfg: RunConfig, out: str | Path, master_seed: int = 0) -> ProbeReport:
    """Full pipeline; seeds are master_seed, master_seed + 1, ... (cfg.seeds of them)."""
    started = time.time()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = dataclasses.replace(cfg, dataset_seed=master_seed)
    data = ensure_dataset(cfg, out / "data")
    seeds = list(range(master_seed, master_seed + cfg.seeds))
    runs = train_all(cfg, data, out, seeds)
    report = probe_all(cfg, data, runs)

    series = {s: r.checkpoints for s, r in runs["ssl"].items()}
    curve = learning_curve(series, data, cfg.curve_layers, ("object",), cfg.probe, out / "curve.tsv")
    sup = supervised_curve(runs["supervised"], data)
    write_curve_table(sup, out / "curve_supervised.tsv")
    raw = report.accuracies("ssl", "x", "object")
    save_learning_curve(curve, out / "learning_curve.png", float(raw.mean()) if len(raw) else None, sup)

    summary = {(s["layer"], s["task"]): (s["mean"], s["sd"]) for s in report.summary() if s["run"] == "ssl"}
    jit = [s for s in report.summary() if s["run"] == "jitter"]
    save_layer_bars(summary, out / "layers.png", cfg.layers, (jit[0]["mean"], jit[0]["sd"]) if jit else None,
                    CHANCE)

    report.meta = {
        "preset": cfg.preset,
        "master_seed": master_seed,
        "seeds": seeds,
        "config": cfg.to_dict(),
        "chance": CHANCE,
        "hue_alignment": weight_figure(cfg, data, out, master_seed),
        "supervised_final_test": _round(sup[-1]["mean"]) if sup else None,
        "software_version": __version__,
    }
    rj, mc = report.write(out)
    artifacts = [rj, mc, out / "curve.tsv", out / "curve_supervised.tsv", out / "learning_curve.png",
                 out / "layers.png", out / "weights_montage.png", out / "x_probe_weights.npy",
                 out / "data" / "dataset.toml", out / "data" / "manifest.jsonl"]
    for mode in runs.values():
        for r in mode.values():
            artifacts += r.checkpoints
    write_run_manifest(out, cfg, master_seed, artifacts, started)
    return report
