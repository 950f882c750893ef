"""Lighting sampler, sequence generation, splits, labels and on-disk format.

Layout of a dataset directory::

    dataset.toml          configuration echo, seed, exposure, checksums
    manifest.jsonl        one record per frame
    images/objDD_frameNNNN.png   8-bit sRGB, 32x32
    images.npy            the same pixels packed as uint8 (N, 3, 32, 32)
    images_f32.npy        optional float32 sRGB before quantization
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
import tomli
import tomli_w
from PIL import Image

from . import __version__, rng
from .renderer import LIGHT_COLORS, RenderSettings, TransportBasis, calibrate_exposure, light_weights, \
    quantize, render_hdr, srgb_decode, tone_map
from .scene import SceneConfig, build_scene

log = logging.getLogger(__name__)

P_ON = 0.5
POWER_RANGE = (300.0, 1000.0)
N_COLORS = len(LIGHT_COLORS)
DRAWS_PER_LIGHT = 3  # on/off, color, power, always consumed
SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
INCOMPLETE_MARKER = ".incomplete"

# binary RGB codes; the off state takes the remaining code (0, 0, 0)
COLOR_CODES = {
    "off": (0, 0, 0), "r": (1, 0, 0), "g": (0, 1, 0), "b": (0, 0, 1),
    "c": (0, 1, 1), "y": (1, 1, 0), "m": (1, 0, 1), "w": (1, 1, 1),
}
_CODE_TABLE = np.array([COLOR_CODES[c] for c in LIGHT_COLORS], dtype=np.uint8)


class DatasetError(IOError):
    pass


@dataclass(frozen=True)
class SpotlightState:
    on: bool
    color_index: int = 0
    power: float = 0.0

    def __post_init__(self):
        if self.on and not POWER_RANGE[0] <= self.power <= POWER_RANGE[1]:
            raise ValueError(f"power {self.power} outside {POWER_RANGE}")


@dataclass(frozen=True)
class FrameLighting:
    """States of all spotlights for one frame, as parallel arrays."""
    on: np.ndarray  # (n_lights,) bool
    color_index: np.ndarray  # (n_lights,) int
    power: np.ndarray  # (n_lights,) float, 0 when off

    def states(self) -> list[SpotlightState]:
        return [SpotlightState(bool(o), int(c), float(p)) for o, c, p in zip(self.on, self.color_index, self.power)]

    def weights(self) -> np.ndarray:
        return light_weights(self.on, self.color_index, self.power)


def sample_lighting(seed: int, object_ids, frames, n_lights: int = 8):
    """Vectorized lighting sampler keyed by (seed, object, frame, light).

    Each light consumes exactly three uniforms: on with probability 0.5, a
    color uniform over the 7 tints, a power uniform over [300, 1000] W.
    Returns (on, color_index, power) arrays of shape (n_frames, n_lights);
    color and power are zeroed for lights that are off.
    """
    obj = np.asarray(object_ids, dtype=np.int64)[:, None]
    frm = np.asarray(frames, dtype=np.int64)[:, None]
    light = np.arange(n_lights)[None, :]
    u_on = rng.uniform(seed, rng.STREAM_LIGHTING, obj, frm, light, 0)
    u_col = rng.uniform(seed, rng.STREAM_LIGHTING, obj, frm, light, 1)
    u_pow = rng.uniform(seed, rng.STREAM_LIGHTING, obj, frm, light, 2)
    on = u_on < P_ON
    color = np.minimum((u_col * N_COLORS).astype(np.int64), N_COLORS - 1)
    power = POWER_RANGE[0] + (POWER_RANGE[1] - POWER_RANGE[0]) * u_pow
    return on, np.where(on, color, 0), np.where(on, power, 0.0)


def sample_frame_lighting(seed: int, object_id: int, frame: int, n_lights: int = 8) -> FrameLighting:
    on, col, pw = sample_lighting(seed, [object_id], [frame], n_lights)
    return FrameLighting(on[0], col[0], pw[0])


def encode_lighting_label(on, color_index) -> np.ndarray:
    """n-hot label: per light its binary RGB code, (0, 0, 0) when off. Shape (..., 3 * n_lights)."""
    on = np.asarray(on, dtype=bool)
    codes = _CODE_TABLE[np.asarray(color_index)] * on[..., None]
    return codes.reshape(*on.shape[:-1], -1).astype(np.uint8)


def split_sizes(frames_per_object: int) -> tuple[int, int, int]:
    n_train = round(frames_per_object * SPLIT_FRACTIONS[0])
    n_val = round(frames_per_object * SPLIT_FRACTIONS[1])
    return n_train, n_val, frames_per_object - n_train - n_val


def split_of_frame(frame, frames_per_object: int) -> np.ndarray:
    """0 train, 1 val, 2 test; contiguous blocks within each sequence."""
    n_train, n_val, _ = split_sizes(frames_per_object)
    frame = np.asarray(frame)
    return np.where(frame < n_train, 0, np.where(frame < n_train + n_val, 1, 2))


SPLIT_NAMES = ("train", "val", "test")


@dataclass
class Manifest:
    """Frame table of a dataset (row n = object n // F, frame n % F)."""
    seed: int
    n_objects: int
    frames_per_object: int
    scene: dict
    exposure: float
    object_id: np.ndarray
    frame: np.ndarray
    on: np.ndarray
    color_index: np.ndarray
    power: np.ndarray
    settings: dict
    checksums: list[str] | None = None

    @property
    def n_frames(self) -> int:
        return len(self.object_id)

    @property
    def labels(self) -> np.ndarray:
        return encode_lighting_label(self.on, self.color_index)

    @property
    def split(self) -> np.ndarray:
        return split_of_frame(self.frame, self.frames_per_object)

    def records(self) -> Iterator[dict]:
        labels = self.labels
        for n in range(self.n_frames):
            rec = {
                "index": n,
                "object_id": int(self.object_id[n]),
                "frame": int(self.frame[n]),
                "split": SPLIT_NAMES[int(split_of_frame(self.frame[n], self.frames_per_object))],
                "file": image_name(int(self.object_id[n]), int(self.frame[n])),
                "lights": [
                    {"on": bool(self.on[n, k]),
                     "color": LIGHT_COLORS[int(self.color_index[n, k])] if self.on[n, k] else "off",
                     "power": round(float(self.power[n, k]), 6)}
                    for k in range(self.on.shape[1])
                ],
                "label": "".join(str(int(b)) for b in labels[n]),
            }
            if self.checksums is not None:
                rec["sha256"] = self.checksums[n]
            yield rec


def make_manifest(scene: SceneConfig, seed: int, frames_per_object: int, exposure: float,
                  settings: RenderSettings) -> Manifest:
    n = scene.n_objects * frames_per_object
    obj = np.arange(n) // frames_per_object
    frm = np.arange(n) % frames_per_object
    on, col, pw = sample_lighting(seed, obj, frm, scene.n_lights)
    return Manifest(seed, scene.n_objects, frames_per_object, scene.to_dict(), exposure, obj, frm, on, col, pw,
                    {"samples_per_pixel": settings.samples_per_pixel, "bounce_count": settings.bounce_count})


def split_dataset(manifest: Manifest) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global frame indices of the train, val and test sets."""
    s = manifest.split
    return tuple(np.flatnonzero(s == i) for i in range(3))


def image_name(object_id: int, frame: int) -> str:
    return f"obj{object_id:02d}_frame{frame:04d}.png"


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def render_sequences(scene: SceneConfig, manifest: Manifest, settings: RenderSettings,
                     mode: str = "basis") -> tuple[np.ndarray, np.ndarray]:
    """Render every frame of the manifest. Returns (uint8 sRGB, float32 sRGB), both (N, 3, H, W).

    ``basis`` reduces one traced sample stream into a transport basis and
    assembles every frame from it; ``trace`` traces each frame with its own
    stream keyed by the global frame index.
    """
    n, s = manifest.n_frames, scene.image_size
    out8 = np.zeros((n, 3, s, s), dtype=np.uint8)
    outf = np.zeros((n, 3, s, s), dtype=np.float32)
    weights = light_weights(manifest.on, manifest.color_index, manifest.power)
    if mode == "basis":
        basis = TransportBasis.build(scene, settings)
        for o in range(scene.n_objects):
            rows = np.flatnonzero(manifest.object_id == o)
            hdr = basis.assemble(weights[rows], scene.albedo(o))
            img = tone_map(hdr, manifest.exposure)
            outf[rows] = img
            out8[rows] = quantize(img)
    elif mode == "trace":
        for i in range(n):
            hdr = render_hdr(scene, weights[i], scene.albedo(int(manifest.object_id[i])), settings, stream=1 + i)
            img = tone_map(hdr, manifest.exposure)
            outf[i] = img
            out8[i] = quantize(img)
    else:
        raise ValueError(f"unknown render mode {mode!r}")
    return out8, outf


def _png_bytes(img8: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.ascontiguousarray(img8.transpose(1, 2, 0))).save(buf, format="PNG", optimize=False)
    return buf.getvalue()


def generate_dataset(out: str | Path, scene: SceneConfig | None = None, seed: int = 0,
                     frames_per_object: int = 1000, settings: RenderSettings | None = None,
                     render_mode: str = "basis", float_sidecar: bool = False) -> Manifest:
    """Render and write a full dataset; deterministic given the arguments."""
    scene = scene or build_scene()
    settings = settings or RenderSettings(seed=seed)
    out = Path(out)
    if out.exists() and (out / INCOMPLETE_MARKER).exists():
        log.warning("removing partial dataset at %s", out)
        shutil.rmtree(out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    marker = out / INCOMPLETE_MARKER
    marker.write_text("generation in progress\n")

    basis = TransportBasis.build(scene, settings)
    exposure = settings.exposure if settings.exposure is not None else calibrate_exposure(scene, settings, basis=basis)
    manifest = make_manifest(scene, seed, frames_per_object, exposure, settings)
    log.info("rendering %d frames (%s mode, %d spp)", manifest.n_frames, render_mode, settings.samples_per_pixel)
    img8, imgf = render_sequences(scene, manifest, settings, render_mode)

    checksums = []
    for n in range(manifest.n_frames):
        data = _png_bytes(img8[n])
        checksums.append(_sha256(data))
        (out / "images" / image_name(int(manifest.object_id[n]), int(manifest.frame[n]))).write_bytes(data)
    manifest.checksums = checksums
    np.save(out / "images.npy", img8)
    if float_sidecar:
        np.save(out / "images_f32.npy", imgf)

    with open(out / "manifest.jsonl", "w") as f:
        for rec in manifest.records():
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    meta = {
        "format_version": 1,
        "software_version": __version__,
        "seed": seed,
        "n_objects": scene.n_objects,
        "frames_per_object": frames_per_object,
        "n_frames": manifest.n_frames,
        "split_fractions": list(SPLIT_FRACTIONS),
        "split_sizes_per_object": list(split_sizes(frames_per_object)),
        "exposure": exposure,
        "render_mode": render_mode,
        "render": manifest.settings,
        "label_codes": {k: list(v) for k, v in COLOR_CODES.items()},
        "scene": manifest.scene,
        "checksums": {
            "manifest.jsonl": _sha256((out / "manifest.jsonl").read_bytes()),
            "images.npy": _sha256((out / "images.npy").read_bytes()),
        },
    }
    with open(out / "dataset.toml", "wb") as f:
        tomli_w.dump(meta, f)
    marker.unlink()
    return manifest


def _read_manifest_records(path: Path) -> list[dict]:
    try:
        with open(path / "manifest.jsonl") as f:
            return [json.loads(line) for line in f]
    except (OSError, json.JSONDecodeError) as e:
        raise DatasetError(f"cannot read manifest in {path}: {e}") from e


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    if (path / INCOMPLETE_MARKER).exists():
        raise DatasetError(f"{path} holds a partial dataset; regenerate it")
    try:
        with open(path / "dataset.toml", "rb") as f:
            meta = tomli.load(f)
    except OSError as e:
        raise DatasetError(f"cannot read {path / 'dataset.toml'}: {e}") from e
    recs = _read_manifest_records(path)
    color_of = {c: i for i, c in enumerate(LIGHT_COLORS)}
    on = np.array([[l["on"] for l in r["lights"]] for r in recs], dtype=bool)
    col = np.array([[color_of.get(l["color"], 0) for l in r["lights"]] for r in recs], dtype=np.int64)
    pw = np.array([[l["power"] for l in r["lights"]] for r in recs], dtype=np.float64)
    return Manifest(
        meta["seed"], meta["n_objects"], meta["frames_per_object"], meta["scene"], meta["exposure"],
        np.array([r["object_id"] for r in recs]), np.array([r["frame"] for r in recs]), on, col, pw,
        meta["render"], [r.get("sha256") for r in recs],
    )


@dataclass
class DatasetArrays:
    """A dataset held in memory: uint8 sRGB pixels plus labels."""
    images: np.ndarray  # (N, 3, H, W) uint8
    object_id: np.ndarray
    frame: np.ndarray
    labels: np.ndarray  # (N, 24) uint8
    split: np.ndarray
    frames_per_object: int
    n_objects: int

    def linear(self, idx) -> np.ndarray:
        """Linear-RGB float32 images in [0, 1] for the given rows."""
        return _LINEAR_LUT[self.images[idx]]

    def pixels(self, idx) -> np.ndarray:
        """Stored (sRGB-encoded) pixel values scaled to [0, 1]; what the network sees."""
        return _PIXEL_LUT[self.images[idx]]

    def indices(self, split: str) -> np.ndarray:
        return np.flatnonzero(self.split == SPLIT_NAMES.index(split))


_LINEAR_LUT = srgb_decode(np.arange(256) / 255.0).astype(np.float32)
_PIXEL_LUT = (np.arange(256) / 255.0).astype(np.float32)


def load_arrays(path: str | Path, verify: bool = True) -> DatasetArrays:
    """Load the packed pixel array, verified against the recorded checksum."""
    path = Path(path)
    m = load_manifest(path)
    with open(path / "dataset.toml", "rb") as f:
        meta = tomli.load(f)
    packed = path / "images.npy"
    if not packed.exists():
        raise DatasetError(f"missing {packed}")
    if verify and _sha256(packed.read_bytes()) != meta["checksums"]["images.npy"]:
        raise DatasetError(f"checksum mismatch for {packed}")
    images = np.load(packed)
    if images.shape[0] != m.n_frames:
        raise DatasetError(f"{packed} holds {images.shape[0]} frames, manifest lists {m.n_frames}")
    return DatasetArrays(images, m.object_id, m.frame, m.labels, m.split, m.frames_per_object, m.n_objects)


def read_dataset(path: str | Path) -> Iterator[tuple[np.ndarray, int, np.ndarray, int]]:
    """Yield (linear RGB float image (3, 32, 32), object_id, 24-bit label, frame index) from the PNGs."""
    path = Path(path)
    m = load_manifest(path)
    labels = m.labels
    for n in range(m.n_frames):
        obj, frm = int(m.object_id[n]), int(m.frame[n])
        f = path / "images" / image_name(obj, frm)
        try:
            data = f.read_bytes()
        except OSError as e:
            raise DatasetError(f"frame {n} (object {obj}, frame {frm}): cannot read {f}: {e}") from e
        if m.checksums and m.checksums[n] and _sha256(data) != m.checksums[n]:
            raise DatasetError(f"frame {n} (object {obj}, frame {frm}): checksum mismatch in {f}")
        img = np.asarray(Image.open(io.BytesIO(data)).convert("RGB")).transpose(2, 0, 1)
        yield _LINEAR_LUT[img], obj, labels[n], frm


def render_base_images(scene: SceneConfig, settings: RenderSettings, exposure: float,
                       power: float = 500.0) -> np.ndarray:
    """Every object under the reference lighting (all lights on, white, equal power): uint8 (n_objects, 3, H, W)."""
    basis = TransportBasis.build(scene, settings)
    n = scene.n_lights
    w = light_weights(np.ones(n, bool), np.full(n, 6), np.full(n, power))[None]
    return np.stack([quantize(tone_map(basis.assemble(w, scene.albedo(o))[0], exposure))
                     for o in range(scene.n_objects)])
