"""Probe reports: per-seed accuracies, aggregates, significance tests, curves and exports."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import DatasetArrays
from .engine import load_checkpoint, no_grad
from .model import Network
from .probe import ProbeConfig, extract_features, run_probe
from .stats import bonferroni, two_sample_ttest

log = logging.getLogger(__name__)

# (name, (run, layer, task), (run, layer, task)); runs are "ssl" or "jitter"
DEFAULT_COMPARISONS = (
    ("h_vs_x_object", ("ssl", "h", "object"), ("ssl", "x", "object")),
    ("h_vs_z_object", ("ssl", "h", "object"), ("ssl", "z", "object")),
    ("h_vs_x_lighting", ("ssl", "h", "lighting"), ("ssl", "x", "lighting")),
    ("h_vs_jitter_h_object", ("ssl", "h", "object"), ("jitter", "h", "object")),
)

METRIC_FIELDS = ("run", "layer", "task", "seed", "epoch", "train", "val", "test")


@dataclass
class ProbeRecord:
    run: str  # which encoder: ssl, jitter or supervised
    layer: str
    task: str
    seed: int
    epoch: int
    train: float
    val: float
    test: float


@dataclass
class Comparison:
    name: str
    a: tuple[str, str, str]
    b: tuple[str, str, str]
    t: float
    df: int
    p: float
    p_adjusted: float = 1.0
    significant: bool = False
    mean_a: float = 0.0
    mean_b: float = 0.0
    degenerate: bool = False


@dataclass
class ProbeReport:
    records: list[ProbeRecord]
    comparisons: list[Comparison] = field(default_factory=list)
    alpha: float = 0.05
    meta: dict = field(default_factory=dict)

    def accuracies(self, run: str, layer: str, task: str, split: str = "test") -> np.ndarray:
        """Per-seed accuracies in seed order."""
        sel = sorted((r for r in self.records if (r.run, r.layer, r.task) == (run, layer, task)),
                     key=lambda r: r.seed)
        return np.array([getattr(r, split) for r in sel])

    def summary(self) -> list[dict]:
        keys = sorted({(r.run, r.layer, r.task) for r in self.records})
        out = []
        for run, layer, task in keys:
            acc = self.accuracies(run, layer, task)
            out.append({"run": run, "layer": layer, "task": task, "n_seeds": int(len(acc)),
                        "mean": _round(acc.mean()), "sd": _round(acc.std(ddof=1) if len(acc) > 1 else 0.0)})
        return out

    def comparison(self, name: str) -> Comparison:
        for c in self.comparisons:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "meta": self.meta,
            "alpha": self.alpha,
            "records": [asdict(r) for r in self.records],
            "summary": self.summary(),
            "comparisons": [_comparison_dict(c) for c in self.comparisons],
        }

    def write(self, out: str | Path) -> tuple[Path, Path]:
        """report.json and metrics.csv; both byte-stable for identical inputs."""
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        rj = out / "report.json"
        rj.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        mc = out / "metrics.csv"
        write_metrics_csv(self.records, mc)
        return rj, mc

    @classmethod
    def from_dict(cls, d: dict) -> "ProbeReport":
        recs = [ProbeRecord(**r) for r in d["records"]]
        comps = []
        for c in d.get("comparisons", []):
            c = dict(c)
            c["a"], c["b"] = tuple(c["a"]), tuple(c["b"])
            comps.append(Comparison(**c))
        return cls(recs, comps, d.get("alpha", 0.05), d.get("meta", {}))


def _round(x: float) -> float:
    # fixed precision keeps the serialized report byte-stable
    return float(f"{float(x):.10g}")


def _comparison_dict(c: Comparison) -> dict:
    d = asdict(c)
    for k in ("t", "p", "p_adjusted", "mean_a", "mean_b"):
        v = d[k]
        d[k] = v if not np.isfinite(v) else _round(v)
    if not np.isfinite(d["t"]):
        d["t"] = "inf" if d["t"] > 0 else "-inf"
    d["a"], d["b"] = list(c.a), list(c.b)
    return d


def write_metrics_csv(records: list[ProbeRecord], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(METRIC_FIELDS)
        for r in sorted(records, key=lambda r: (r.run, r.layer, r.task, r.seed, r.epoch)):
            w.writerow([r.run, r.layer, r.task, r.seed, r.epoch, f"{r.train:.6f}", f"{r.val:.6f}", f"{r.test:.6f}"])
    return path


def compare(report: ProbeReport, comparisons=DEFAULT_COMPARISONS, alpha: float = 0.05) -> list[Comparison]:
    """Run each comparison that has data on both sides, as one Bonferroni family."""
    results = []
    for name, a, b in comparisons:
        xa, xb = report.accuracies(*a), report.accuracies(*b)
        if len(xa) < 2 or len(xb) < 2:
            log.warning("comparison %s skipped: needs >= 2 seeds per side (%d, %d)", name, len(xa), len(xb))
            continue
        t = two_sample_ttest(xa, xb)
        results.append(Comparison(name, a, b, t.t, t.df, t.p, mean_a=t.mean_a, mean_b=t.mean_b,
                                  degenerate=t.degenerate))
    if results:
        adj, rej = bonferroni([c.p for c in results], alpha)
        for c, pa, r in zip(results, adj, rej):
            c.p_adjusted, c.significant = pa, r
    report.comparisons = results
    report.alpha = alpha
    return results


def probe_checkpoint(checkpoint, data: DatasetArrays, layers, tasks, seed: int, cfg: ProbeConfig,
                     run: str = "ssl", epoch: int | None = None) -> list[ProbeRecord]:
    """All (layer, task) probes of one encoder; features are extracted once per layer."""
    net = None if checkpoint is None else Network(load_checkpoint(checkpoint).params, trainable=False)
    if epoch is None:
        epoch = load_checkpoint(checkpoint).epoch if checkpoint is not None else 0
    records = []
    for layer in layers:
        feats = {s: extract_features(net, layer, data, s) for s in ("train", "val", "test")}
        for task in tasks:
            r = run_probe(net, data, layer, task, seed, cfg, features=feats)
            records.append(ProbeRecord(run, layer, task, seed, epoch, _round(r.train), _round(r.val),
                                       _round(r.test)))
    return records


def classifier_accuracy(checkpoint, data: DatasetArrays, split: str = "test", batch: int = 1000) -> float:
    """Accuracy of the supervised baseline's own linear head."""
    net = Network(load_checkpoint(checkpoint).params, trainable=False)
    idx = data.indices(split)
    correct = 0
    with no_grad():
        for s in range(0, len(idx), batch):
            part = idx[s:s + batch]
            logits = net.classify(net.encode(data.pixels(part)).h).data
            correct += int((logits.argmax(axis=1) == data.object_id[part]).sum())
    return correct / len(idx)


def learning_curve(series: dict[int, list[Path]], data: DatasetArrays, layers, tasks, cfg: ProbeConfig,
                   out: str | Path | None = None) -> list[dict]:
    """Probe every checkpoint of every seed; rows (epoch, layer, task, mean, sd, n).

    ``series`` maps seed -> checkpoint paths. Missing files are skipped with a warning.
    """
    per: dict[tuple, list[float]] = {}
    for seed, paths in sorted(series.items()):
        for p in paths:
            p = Path(p)
            if not p.exists():
                log.warning("checkpoint %s missing, skipped", p)
                continue
            for r in probe_checkpoint(p, data, layers, tasks, seed, cfg):
                per.setdefault((r.epoch, r.layer, r.task), []).append(r.test)
    rows = []
    for (epoch, layer, task), accs in sorted(per.items()):
        a = np.array(accs)
        rows.append({"epoch": epoch, "layer": layer, "task": task, "mean": _round(a.mean()),
                     "sd": _round(a.std(ddof=1) if len(a) > 1 else 0.0), "n": len(a)})
    if out is not None:
        write_curve_table(rows, out)
    return rows


def write_curve_table(rows: list[dict], path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, delimiter="\t", lineterminator="\n")
        w.writerow(["epoch", "layer", "task", "mean", "sd", "n"])
        for r in rows:
            w.writerow([r["epoch"], r["layer"], r["task"], f"{r['mean']:.6f}", f"{r['sd']:.6f}", r["n"]])
    return path


def export_embeddings(checkpoint, data: DatasetArrays, layer: str, split: str, path: str | Path) -> Path:
    """CSV with one row per frame: frame id, object id, 24-bit label string, feature columns."""
    fm = extract_features(checkpoint, layer, data, split)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["frame_id", "object_id", "frame", "lighting_label"] + [f"{layer}_{i}" for i in range(fm.width)])
        for row, n in zip(fm.values, fm.index):
            label = "".join(str(int(b)) for b in data.labels[n])
            w.writerow([int(n), int(data.object_id[n]), int(data.frame[n]), label] + [f"{v:.9g}" for v in row])
    return path
