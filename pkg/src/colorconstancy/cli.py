"""Command-line entry point: ``colorconstancy <command> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .config import PRESETS, RunConfig, load_config
from .dataset import DatasetError, generate_dataset, load_arrays
from .engine import CheckpointError, load_checkpoint
from .model import LAYERS, describe
from .pipeline import base_images, reproduce_all, write_run_manifest
from .probe import TASKS
from .renderer import (CalibrationError, TransportBasis, calibrate_exposure, face_coverage, luminance, quantize,
                       reference_weights, tone_map)
from .report import ProbeRecord, ProbeReport, compare, export_embeddings, learning_curve, probe_checkpoint
from .scene import ConfigError
from .trainer import MODES, TrainingError, train_jitter_baseline, train_ssl, train_supervised_baseline
from .viz import save_learning_curve

log = logging.getLogger("colorconstancy")


def _csv_list(valid):
    def parse(text: str) -> list[str]:
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in valid]
        if bad:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad}; valid: {','.join(valid)}")
        return items
    return parse


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML configuration file")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None,
                   help="base preset (default: the file's 'preset' key, else full)")


def _config(args) -> RunConfig:
    return load_config(args.config, args.preset)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="colorconstancy",
                                 description="Colored-cube dataset, temporal contrastive training and probes.")
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="render the dataset")
    _add_config_args(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--frames-per-object", type=int, default=None)
    p.add_argument("--samples-per-pixel", type=int, default=None)
    p.add_argument("--float-sidecar", action="store_true", help="also write float32 pixels before quantization")

    p = sub.add_parser("train", help="train one encoder")
    _add_config_args(p)
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--data", type=Path, help="dataset directory (ssl, supervised; sets jitter's epoch length)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("probe", help="linear probes on a frozen checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--layers", type=_csv_list(LAYERS), default=["h"])
    p.add_argument("--tasks", type=_csv_list(TASKS), default=list(TASKS))
    p.add_argument("--seeds", type=int, default=5, help="number of probe seeds (0, 1, ...)")
    p.add_argument("--run", default=None, help="run label in the report (default: the checkpoint's mode)")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("curve", help="probe accuracy against training epoch")
    _add_config_args(p)
    p.add_argument("--runs", type=Path, nargs="+", required=True, help="training output directories, one per seed")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--layers", type=_csv_list(LAYERS), default=["h"])
    p.add_argument("--tasks", type=_csv_list(TASKS), default=["object"])
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("viz-weights", help="raw-pixel probe weights as an RGB montage")
    _add_config_args(p)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("export-embeddings", help="write per-frame features for external tools")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--layer", choices=LAYERS, default="h")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", type=Path, required=True, help="output CSV file")

    p = sub.add_parser("report", help="merge metrics files and run the significance tests")
    p.add_argument("--metrics", type=Path, nargs="+", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("reproduce-all", help="dataset, training, probes, figures and report")
    _add_config_args(p)
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--seeds", type=int, default=None, help="number of training seeds")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("render-diagnostic", help="reference frame, luminance histogram and face coverage")
    _add_config_args(p)
    p.add_argument("--object", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("inspect", help="layer shapes and parameter counts")
    p.add_argument("--d-z", type=int, default=64)
    return ap


# ---------------------------------------------------------------- commands

def cmd_gen_dataset(args) -> int:
    cfg = _config(args)
    if args.seed is not None:
        cfg.dataset_seed = args.seed
    if args.frames_per_object is not None:
        cfg.frames_per_object = args.frames_per_object
    if args.samples_per_pixel is not None:
        if args.samples_per_pixel < 1:
            raise ConfigError("samples_per_pixel", "must be >= 1")
        cfg.render = dataclasses.replace(cfg.render, samples_per_pixel=args.samples_per_pixel)
    started = time.time()
    m = generate_dataset(args.out, cfg.build_scene(), cfg.dataset_seed, cfg.frames_per_object,
                         cfg.render_settings(), cfg.render_mode, args.float_sidecar)
    write_run_manifest(args.out, cfg, cfg.dataset_seed,
                       [args.out / "dataset.toml", args.out / "manifest.jsonl", args.out / "images.npy"], started)
    print(f"wrote {m.n_frames} frames to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    tc = dataclasses.replace(cfg.train, seed=args.seed)
    if args.epochs is not None:
        tc.epochs = args.epochs
    tc.validate()
    started = time.time()
    if args.mode == "jitter":
        if args.data is not None:
            train_size = len(load_arrays(args.data).indices("train"))
        else:
            train_size = cfg.build_scene().n_objects * round(0.6 * cfg.frames_per_object)
        res = train_jitter_baseline(base_images(cfg), tc, args.out, train_size, cfg.jitter)
    else:
        if args.data is None:
            raise ConfigError("data", f"--data is required for mode {args.mode}")
        data = load_arrays(args.data)
        fn = train_ssl if args.mode == "ssl" else train_supervised_baseline
        res = fn(data, tc, args.out)
    write_run_manifest(args.out, cfg, args.seed, res.checkpoints + [args.out / "loss.tsv", args.out / "run.json"],
                       started)
    print(f"{args.mode}: {len(res.checkpoints)} checkpoint(s) in {args.out}")
    return 0


def cmd_probe(args) -> int:
    cfg = _config(args)
    data = load_arrays(args.data)
    ck = load_checkpoint(args.checkpoint)
    run = args.run or ck.meta.get("mode", "ssl")
    records = []
    for seed in range(args.seeds):
        records += probe_checkpoint(args.checkpoint, data, args.layers, args.tasks, seed, cfg.probe, run)
    report = ProbeReport(records, meta={"checkpoint": str(args.checkpoint), "probe_seeds": args.seeds})
    report.write(args.out)
    for s in report.summary():
        print(f"{s['run']:10s} {s['layer']:3s} {s['task']:9s} {s['mean']:.4f} +- {s['sd']:.4f}  (n={s['n_seeds']})")
    return 0


def cmd_curve(args) -> int:
    cfg = _config(args)
    data = load_arrays(args.data)
    series = {}
    for i, run in enumerate(args.runs):
        cks = sorted(run.glob("epoch*.ckpt"))
        if not cks:
            log.warning("no checkpoints in %s", run)
            continue
        seed = load_checkpoint(cks[0]).meta.get("config", {}).get("seed", i)
        series[seed] = cks
    if not series:
        raise DatasetError("no checkpoints found in the given run directories")
    args.out.mkdir(parents=True, exist_ok=True)
    rows = learning_curve(series, data, args.layers, args.tasks, cfg.probe, args.out / "curve.tsv")
    for task in args.tasks:
        save_learning_curve(rows, args.out / f"learning_curve_{task}.png", task=task)
    print(f"{len(rows)} curve rows written to {args.out / 'curve.tsv'}")
    return 0


def cmd_viz_weights(args) -> int:
    from .pipeline import weight_figure
    cfg = _config(args)
    data = load_arrays(args.data)
    args.out.mkdir(parents=True, exist_ok=True)
    ha = weight_figure(cfg, data, args.out, args.seed)
    (args.out / "hue_alignment.json").write_text(json.dumps(ha, indent=2, sort_keys=True) + "\n")
    print(f"hue alignment: {ha['fraction']:.3f} of classes within {ha['tolerance_deg']:.0f} degrees")
    return 0


def cmd_export(args) -> int:
    data = load_arrays(args.data)
    path = export_embeddings(args.checkpoint, data, args.layer, args.split, args.out)
    print(f"wrote {path}")
    return 0


def read_metrics_csv(path: Path) -> list[ProbeRecord]:
    with open(path, newline="") as f:
        return [ProbeRecord(r["run"], r["layer"], r["task"], int(r["seed"]), int(r["epoch"]), float(r["train"]),
                            float(r["val"]), float(r["test"])) for r in csv.DictReader(f)]


def cmd_report(args) -> int:
    records = []
    for m in args.metrics:
        records += read_metrics_csv(m)
    report = ProbeReport(records)
    compare(report, alpha=args.alpha)
    report.write(args.out)
    for c in report.comparisons:
        print(f"{c.name:22s} t({c.df}) = {c.t:8.3f}  p = {c.p:.4g}  adj = {c.p_adjusted:.4g}"
              f"  {'significant' if c.significant else 'n.s.'}")
    return 0


def cmd_reproduce(args) -> int:
    cfg = _config(args)
    if args.seeds is not None:
        cfg.seeds = args.seeds
    report = reproduce_all(cfg, args.out, args.seed)
    for s in report.summary():
        print(f"{s['run']:10s} {s['layer']:3s} {s['task']:9s} {s['mean']:.4f} +- {s['sd']:.4f}")
    for c in report.comparisons:
        print(f"{c.name:22s} t({c.df}) = {c.t:8.3f}  adj p = {c.p_adjusted:.4g}")
    return 0


def cmd_render_diagnostic(args) -> int:
    cfg = _config(args)
    scene = cfg.build_scene()
    settings = cfg.render_settings()
    basis = TransportBasis.build(scene, settings)
    exposure = calibrate_exposure(scene, settings, basis=basis)
    hdr = basis.assemble(reference_weights(scene)[None], scene.albedo(args.object))[0]
    img = quantize(tone_map(hdr, exposure))
    args.out.mkdir(parents=True, exist_ok=True)
    Image.fromarray(img.transpose(1, 2, 0)).save(args.out / "reference.png")
    lum = luminance(exposure * hdr).ravel()
    counts, edges = np.histogram(lum, bins=20, range=(0.0, max(1.0, float(lum.max()))))
    diag = {
        "exposure": exposure,
        "p95_luminance": float(np.percentile(lum, 95)),
        "fraction_clipped": float(np.mean(lum >= 1.0)),
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
        "face_pixels": {str(k): v for k, v in face_coverage(scene).items()},
        "spot_elevation_deg": scene.rig.elevation_deg,
    }
    (args.out / "diagnostic.json").write_text(json.dumps(diag, indent=2, sort_keys=True) + "\n")
    print(f"exposure {exposure:.6g}; face pixels {diag['face_pixels']}")
    return 0


def cmd_inspect(args) -> int:
    print(describe(args.d_z))
    return 0


COMMANDS = {
    "gen-dataset": cmd_gen_dataset, "train": cmd_train, "probe": cmd_probe, "curve": cmd_curve,
    "viz-weights": cmd_viz_weights, "export-embeddings": cmd_export, "report": cmd_report,
    "reproduce-all": cmd_reproduce, "render-diagnostic": cmd_render_diagnostic, "inspect": cmd_inspect,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (DatasetError, CheckpointError, CalibrationError, TrainingError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
