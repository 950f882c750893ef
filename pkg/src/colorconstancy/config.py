"""Run configuration: sectioned TOML files and the built-in presets.

A configuration file has up to seven sections; every key is optional and
falls back to the chosen preset::

    [scene]      # any SceneConfig field, material_<name> for the material
    [render]     # samples_per_pixel, bounce_count
    [dataset]    # seed, frames_per_object, render_mode
    [train]      # tau, n_pairs, lr, epochs, d_z, checkpoint_every, with_replacement
    [jitter]     # brightness, contrast, saturation, hue
    [probe]      # epochs, batch_size, lr, layers, tasks, curve_layers
    [run]        # seeds
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .probe import ProbeConfig
from .renderer import RenderSettings
from .scene import ConfigError, SceneConfig, build_scene
from .trainer import JitterConfig, SslConfig

SECTIONS = ("scene", "render", "dataset", "train", "jitter", "probe", "run")

PRESETS: dict[str, dict] = {
    "full": {
        "dataset": {"frames_per_object": 1000},
        "train": {"epochs": 100, "n_pairs": 300},
        "probe": {"batch_size": 600},
        "run": {"seeds": 5},
    },
    "desk": {
        "dataset": {"frames_per_object": 200},
        "train": {"epochs": 40, "n_pairs": 64},
        "probe": {"batch_size": 128},
        "run": {"seeds": 3},
    },
    # smoke-test scale: seconds end to end, same code paths
    "tiny": {
        "scene": {"n_objects": 10},
        "render": {"samples_per_pixel": 4},
        "dataset": {"frames_per_object": 20},
        "train": {"epochs": 2, "n_pairs": 16, "checkpoint_every": 1},
        "probe": {"epochs": 5, "batch_size": 32},
        "run": {"seeds": 2},
    },
}


@dataclass
class RunConfig:
    """Everything one pipeline run needs, resolved from a preset plus overrides."""
    preset: str = "full"
    scene: dict = field(default_factory=dict)
    render: RenderSettings = field(default_factory=RenderSettings)
    dataset_seed: int = 0
    frames_per_object: int = 1000
    render_mode: str = "basis"
    train: SslConfig = field(default_factory=SslConfig)
    jitter: JitterConfig = field(default_factory=JitterConfig)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    layers: tuple[str, ...] = ("x", "l1", "l2", "l3", "h", "z")
    tasks: tuple[str, ...] = ("object", "lighting")
    curve_layers: tuple[str, ...] = ("h",)
    seeds: int = 5

    def build_scene(self) -> SceneConfig:
        return build_scene(**self.scene)

    def render_settings(self) -> RenderSettings:
        return dataclasses.replace(self.render, seed=self.dataset_seed)

    def to_dict(self) -> dict:
        """Plain sectioned view, the same shape a config file uses."""
        return {
            "preset": self.preset,
            "scene": dict(self.scene),
            "render": {"samples_per_pixel": self.render.samples_per_pixel, "bounce_count": self.render.bounce_count},
            "dataset": {"seed": self.dataset_seed, "frames_per_object": self.frames_per_object,
                        "render_mode": self.render_mode},
            "train": dataclasses.asdict(self.train),
            "jitter": dataclasses.asdict(self.jitter),
            "probe": {**dataclasses.asdict(self.probe), "layers": list(self.layers), "tasks": list(self.tasks),
                      "curve_layers": list(self.curve_layers)},
            "run": {"seeds": self.seeds},
        }


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for section, values in extra.items():
        if section not in SECTIONS:
            raise ConfigError(section, f"unknown section; valid sections: {', '.join(SECTIONS)}")
        if not isinstance(values, dict):
            raise ConfigError(section, "expected a table of key = value entries")
        out.setdefault(section, {}).update(values)
    return out


def _apply(target, values: dict, section: str, allowed: set[str] | None = None):
    names = {f.name for f in dataclasses.fields(target)}
    updates = {}
    for k, v in values.items():
        if k not in names or (allowed is not None and k not in allowed):
            raise ConfigError(f"{section}.{k}", "unknown parameter")
        updates[k] = type(getattr(target, k))(v)
    try:
        return dataclasses.replace(target, **updates)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        named = [k for k in updates if str(e).startswith(k)]
        key = named[0] if named else ",".join(updates)
        raise ConfigError(f"{section}.{key}", str(e).removeprefix(f"{key}:").strip()) from e


def resolve(preset: str = "full", overrides: dict | None = None) -> RunConfig:
    """Preset values, then ``overrides`` (same sectioned shape), validated."""
    if preset not in PRESETS:
        raise ConfigError("preset", f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    raw = _merge(PRESETS[preset], overrides or {})
    cfg = RunConfig(preset=preset)
    cfg.scene = dict(raw.get("scene", {}))
    try:
        cfg.build_scene()
    except ConfigError as e:
        raise ConfigError(f"scene.{e.field}", str(e).partition(": ")[2]) from e
    cfg.render = _apply(cfg.render, raw.get("render", {}), "render", {"samples_per_pixel", "bounce_count"})
    if cfg.render.bounce_count not in (0, 1):
        raise ConfigError("render.bounce_count", "must be 0 or 1")
    ds = dict(raw.get("dataset", {}))
    for k in ds:
        if k not in ("seed", "frames_per_object", "render_mode"):
            raise ConfigError(f"dataset.{k}", "unknown parameter")
    cfg.dataset_seed = int(ds.get("seed", cfg.dataset_seed))
    cfg.frames_per_object = int(ds.get("frames_per_object", cfg.frames_per_object))
    cfg.render_mode = str(ds.get("render_mode", cfg.render_mode))
    if cfg.frames_per_object < 5:
        raise ConfigError("dataset.frames_per_object", "need at least 5 frames per object")
    if cfg.render_mode not in ("basis", "trace"):
        raise ConfigError("dataset.render_mode", "must be 'basis' or 'trace'")
    cfg.train = _apply(cfg.train, raw.get("train", {}), "train")
    try:
        cfg.train.validate()
    except ValueError as e:
        field_name, _, msg = str(e).partition(": ")
        raise ConfigError(f"train.{field_name}", msg) from e
    cfg.jitter = _apply(cfg.jitter, raw.get("jitter", {}), "jitter")
    probe = dict(raw.get("probe", {}))
    for k in ("layers", "tasks", "curve_layers"):
        if k in probe:
            setattr(cfg, k, tuple(probe.pop(k)))
    cfg.probe = _apply(cfg.probe, probe, "probe")
    if cfg.probe.epochs < 1 or cfg.probe.batch_size < 1:
        raise ConfigError("probe.epochs", "probe epochs and batch_size must be >= 1")
    run = dict(raw.get("run", {}))
    for k in run:
        if k != "seeds":
            raise ConfigError(f"run.{k}", "unknown parameter")
    cfg.seeds = int(run.get("seeds", cfg.seeds))
    if cfg.seeds < 1:
        raise ConfigError("run.seeds", "must be >= 1")
    return cfg


def load_config(path: str | Path | None = None, preset: str | None = None) -> RunConfig:
    """Read a TOML file (if given) on top of a preset.

    The preset is ``preset`` when given, else the file's ``preset`` key, else full.
    """
    overrides = {}
    if path is not None:
        with open(path, "rb") as f:
            try:
                overrides = tomli.load(f)
            except tomli.TOMLDecodeError as e:
                raise ConfigError(str(path), f"malformed configuration: {e}") from e
    file_preset = overrides.pop("preset", None)
    return resolve(preset or file_preset or "full", overrides)
