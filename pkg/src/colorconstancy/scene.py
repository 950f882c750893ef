"""Static world description: cube palette, geometry, camera and spotlight rig."""

from __future__ import annotations

import colorsys
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


def hsv_to_rgb(h: float, s: float, v: float) -> tuple[float, float, float]:
    """Hexcone HSV to RGB, all components in [0, 1]."""
    if not 0.0 <= h < 1.0:
        raise ValueError(f"hue must lie in [0, 1), got {h}")
    if not 0.0 <= s <= 1.0 or not 0.0 <= v <= 1.0:
        raise ValueError(f"saturation and value must lie in [0, 1], got s={s}, v={v}")
    return colorsys.hsv_to_rgb(h, s, v)


def rgb_to_hsv(r: float, g: float, b: float) -> tuple[float, float, float]:
    return colorsys.rgb_to_hsv(r, g, b)


@dataclass(frozen=True)
class CubeColor:
    object_id: int
    hue: float
    saturation: float
    value: float
    albedo_rgb: tuple[float, float, float]


def make_object_palette(n_objects: int, saturation: float = 0.5, value: float = 1.0) -> list[CubeColor]:
    """Equidistant hues around the HSV circle at fixed saturation and value."""
    if n_objects < 1:
        raise ConfigError("n_objects", "need at least one object")
    palette = []
    for i in range(n_objects):
        hue = i / n_objects
        palette.append(CubeColor(i, hue, saturation, value, hsv_to_rgb(hue, saturation, value)))
    return palette


@dataclass(frozen=True)
class SpotlightRig:
    positions: tuple[tuple[float, float, float], ...]
    aim_point: tuple[float, float, float]
    cone_half_angle: float  # degrees
    cone_blend: float

    @property
    def n_lights(self) -> int:
        return len(self.positions)

    @property
    def directions(self) -> np.ndarray:
        """Unit spot axes, shape (n_lights, 3)."""
        p = np.asarray(self.positions)
        d = np.asarray(self.aim_point) - p
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    @property
    def elevation_deg(self) -> float:
        """Angle of the spot axis below the horizontal (identical for all lights)."""
        d = self.directions[0]
        return math.degrees(math.asin(-d[2]))


def make_rig(n_lights: int = 8, radius: float = 6.0, height: float = 5.0,
             aim_point=(0.0, 0.0, 1.0), cone_half_angle: float = 22.5,
             cone_blend: float = 0.15) -> SpotlightRig:
    positions = []
    for k in range(n_lights):
        a = 2.0 * math.pi * k / n_lights
        positions.append((radius * math.cos(a), radius * math.sin(a), height))
    return SpotlightRig(tuple(positions), tuple(aim_point), cone_half_angle, cone_blend)


@dataclass(frozen=True)
class Material:
    roughness: float = 0.5
    sheen: float = 0.0
    sheen_tint: float = 0.5
    opacity: float = 1.0
    clearcoat_roughness: float = 0.03
    ior: float = 1.45


@dataclass(frozen=True)
class SceneConfig:
    ground_size: float = 20.0
    ground_albedo: tuple[float, float, float] = (0.5, 0.5, 0.5)
    cube_size: float = 2.0
    cube_yaw: float = 45.0  # degrees about z
    camera_position: tuple[float, float, float] = (0.0, -4.0, 4.0)
    camera_pitch: float = 50.0  # degrees below horizontal
    camera_fov: float = 64.0  # vertical, degrees
    image_size: int = 32
    n_objects: int = 50
    rig_radius: float = 6.0
    rig_height: float = 5.0
    n_lights: int = 8
    cone_half_angle: float = 22.5
    cone_blend: float = 0.15
    material: Material = field(default_factory=Material)
    palette: tuple[CubeColor, ...] = ()
    rig: SpotlightRig | None = None

    @property
    def cube_center(self) -> tuple[float, float, float]:
        return (0.0, 0.0, self.cube_size / 2.0)

    def albedo(self, object_id: int) -> np.ndarray:
        return np.asarray(self.palette[object_id].albedo_rgb, dtype=np.float64)

    def camera_basis(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, right, up) unit vectors; the camera looks along +y, pitched down."""
        p = math.radians(self.camera_pitch)
        forward = np.array([0.0, math.cos(p), -math.sin(p)])
        right = np.array([1.0, 0.0, 0.0])
        up = np.cross(right, forward)
        return forward, right, up

    def to_dict(self) -> dict[str, Any]:
        """Flat echo of the effective configuration (palette and rig are derived)."""
        out = {}
        for f in dataclasses.fields(self):
            if f.name in ("palette", "rig"):
                continue
            v = getattr(self, f.name)
            if f.name == "material":
                out.update({f"material_{k}": x for k, x in dataclasses.asdict(v).items()})
            else:
                out[f.name] = list(v) if isinstance(v, tuple) else v
        out["spot_elevation_deg"] = self.rig.elevation_deg
        return out


_MATERIAL_REQUIRED = {"opacity": 1.0, "sheen": 0.0, "sheen_tint": 0.5, "roughness": 0.5}


def build_scene(**overrides) -> SceneConfig:
    """Scene with the default world, any field overridable; validated.

    Material entries may be given as ``material_<name>`` keys.
    """
    material_kw = {k[len("material_"):]: v for k, v in overrides.items() if k.startswith("material_")}
    scene_kw = {k: v for k, v in overrides.items() if not k.startswith("material_")}
    known = {f.name for f in dataclasses.fields(SceneConfig)} - {"palette", "rig", "material"}
    for k in scene_kw:
        if k not in known:
            raise ConfigError(k, "unknown scene parameter")
    mat_known = {f.name for f in dataclasses.fields(Material)}
    for k in material_kw:
        if k not in mat_known:
            raise ConfigError(f"material_{k}", "unknown material parameter")
    for k in ("ground_albedo", "camera_position"):
        if k in scene_kw:
            scene_kw[k] = tuple(float(x) for x in scene_kw[k])

    base = SceneConfig(material=Material(**material_kw), **scene_kw)
    if base.n_objects < 1:
        raise ConfigError("n_objects", "need at least one object")
    palette = tuple(make_object_palette(base.n_objects))
    rig = make_rig(base.n_lights, base.rig_radius, base.rig_height, base.cube_center,
                   base.cone_half_angle, base.cone_blend)
    scene = dataclasses.replace(base, palette=palette, rig=rig)
    validate_scene(scene)
    return scene


def validate_scene(scene: SceneConfig) -> None:
    for name, want in _MATERIAL_REQUIRED.items():
        if getattr(scene.material, name) != want:
            raise ConfigError(f"material_{name}", f"must be {want}")
    if scene.ground_size <= scene.cube_size * math.sqrt(2):
        raise ConfigError("ground_size", "ground plane must extend beyond the cube footprint")
    if scene.cube_size <= 0:
        raise ConfigError("cube_size", "must be positive")
    if not all(0.0 <= a <= 1.0 for a in scene.ground_albedo):
        raise ConfigError("ground_albedo", "components must lie in [0, 1]")
    if not 0.0 < scene.camera_fov < 180.0:
        raise ConfigError("camera_fov", "must lie in (0, 180) degrees")
    if not 0.0 < scene.camera_pitch < 90.0:
        raise ConfigError("camera_pitch", "must lie in (0, 90) degrees")
    if scene.camera_position[2] <= scene.cube_size:
        raise ConfigError("camera_position", "camera must be above the cube")
    if scene.image_size < 1:
        raise ConfigError("image_size", "must be positive")
    if scene.n_lights < 1:
        raise ConfigError("n_lights", "need at least one spotlight")
    if not 0.0 < scene.cone_half_angle < 90.0:
        raise ConfigError("cone_half_angle", "must lie in (0, 90) degrees")
    if not 0.0 <= scene.cone_blend <= 1.0:
        raise ConfigError("cone_blend", "must lie in [0, 1]")
    if scene.rig_height <= scene.cube_size:
        raise ConfigError("rig_height", "spotlights must hang above the cube")
    for c in scene.palette:
        if c.saturation != 0.5 or c.value != 1.0:
            raise ConfigError("palette", f"object {c.object_id} must have S=0.5, V=1")
    if len({c.albedo_rgb for c in scene.palette}) != len(scene.palette):
        raise ConfigError("palette", "albedos must be distinct")
