"""Spotlight renderer for the cube scene.

Lambertian cube and ground plane, direct spotlight illumination with hard
shadows from the cube, plus one cosine-sampled diffuse bounce between the
two surfaces. All randomness is counter based: a sample is a pure function
of (seed, stream, pixel, sample index, dimension).

Transport is linear in the light powers and, channel by channel, in the
light tints, so the per-sample path data can be reduced once into a
:class:`TransportBasis` from which any lighting and any cube albedo are
assembled without re-tracing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .scene import SceneConfig

SURFACE_NONE = -1
SURFACE_GROUND = 0
SURFACE_CUBE = 1  # faces 1..6 in hit.face; the shading class is "cube"

# binary RGB codes for the spotlight colors r, g, b, c, y, m, w
LIGHT_COLORS = ("r", "g", "b", "c", "y", "m", "w")
LIGHT_TINTS = np.array([
    [1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 1, 1], [1, 1, 0], [1, 0, 1], [1, 1, 1],
], dtype=np.float64)

LUMA = np.array([0.2126, 0.7152, 0.0722])
_EPS = 1e-6


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class RenderSettings:
    samples_per_pixel: int = 64
    bounce_count: int = 1
    exposure: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_pixel < 1:
            raise ValueError("samples_per_pixel must be >= 1")
        if self.bounce_count not in (0, 1):
            raise ValueError("bounce_count must be 0 or 1")


@dataclass
class Rays:
    origin: np.ndarray  # (n, 3)
    direction: np.ndarray  # (n, 3), unit


@dataclass
class SurfaceHit:
    """Nearest intersections for a batch of rays; surface == -1 marks a miss."""
    t: np.ndarray
    point: np.ndarray
    normal: np.ndarray
    surface: np.ndarray  # SURFACE_NONE / SURFACE_GROUND / SURFACE_CUBE
    face: np.ndarray  # 0 ground, 1..6 cube faces (+x,-x,+y,-y,+z,-z in cube frame), -1 miss

    @property
    def hit(self) -> np.ndarray:
        return self.surface != SURFACE_NONE


def _rot_z(deg: float) -> np.ndarray:
    a = math.radians(deg)
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _intersect_cube(origin, direction, scene: SceneConfig, t_max=None):
    """Slab test against the yaw-rotated cube. Returns (t, face) with t=inf on miss."""
    rot = _rot_z(scene.cube_yaw)
    center = np.asarray(scene.cube_center)
    o = (origin - center) @ rot  # world -> cube frame is R^T, row-vector form
    d = direction @ rot
    half = scene.cube_size / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        t1 = (-half - o) * inv
        t2 = (half - o) * inv
    tlo = np.minimum(t1, t2)
    thi = np.maximum(t1, t2)
    # rays parallel to a slab: inside -> (-inf, inf), outside -> empty
    parallel = d == 0.0
    inside = np.abs(o) <= half
    tlo = np.where(parallel, np.where(inside, -np.inf, np.inf), tlo)
    thi = np.where(parallel, np.where(inside, np.inf, -np.inf), thi)
    t_near = tlo.max(axis=1)
    t_far = thi.min(axis=1)
    axis = tlo.argmax(axis=1)
    hit = (t_near <= t_far) & (t_near > _EPS)
    if t_max is not None:
        hit &= t_near < t_max
    t = np.where(hit, t_near, np.inf)
    d_axis = d[np.arange(len(d)), axis]
    # entering through the face whose outward normal opposes the ray
    face = 1 + 2 * axis + (d_axis > 0).astype(np.int64)
    face = np.where(hit, face, -1)
    return t, face


def _face_normals(scene: SceneConfig) -> np.ndarray:
    """World normals indexed by face id (row 0 is the ground)."""
    local = np.array([[0, 0, 1], [1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]],
                     dtype=np.float64)
    rot = _rot_z(scene.cube_yaw)
    out = local @ rot.T
    out[0] = (0.0, 0.0, 1.0)
    return out


def intersect_scene(rays: Rays, scene: SceneConfig) -> SurfaceHit:
    """Nearest hit among the bounded ground plane (z=0) and the cube."""
    o, d = rays.origin, rays.direction
    with np.errstate(divide="ignore", invalid="ignore"):
        tg = np.where(d[:, 2] < 0.0, -o[:, 2] / d[:, 2], np.inf)
    tg = np.where(tg > _EPS, tg, np.inf)
    pg = o + np.where(np.isfinite(tg), tg, 0.0)[:, None] * d
    half = scene.ground_size / 2.0
    tg = np.where((np.abs(pg[:, 0]) <= half) & (np.abs(pg[:, 1]) <= half), tg, np.inf)

    tc, face = _intersect_cube(o, d, scene)
    cube_first = tc < tg
    t = np.minimum(tc, tg)
    hit = np.isfinite(t)
    face = np.where(cube_first, face, np.where(hit, 0, -1))
    surface = np.where(cube_first, SURFACE_CUBE, np.where(hit, SURFACE_GROUND, SURFACE_NONE))
    point = o + np.where(hit, t, 0.0)[:, None] * d
    normal = _face_normals(scene)[np.maximum(face, 0)]
    normal = np.where(hit[:, None], normal, 0.0)
    return SurfaceHit(t, point, normal, surface, face)


def cone_falloff(cos_angle: np.ndarray, half_angle_deg: float, blend: float) -> np.ndarray:
    """1 inside the inner cone, smoothstep across the blend band, 0 outside."""
    outer = math.radians(half_angle_deg)
    inner = outer * (1.0 - blend)
    theta = np.arccos(np.clip(cos_angle, -1.0, 1.0))
    if outer == inner:
        return (theta <= outer).astype(np.float64)
    x = np.clip((outer - theta) / (outer - inner), 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def unit_irradiance(scene: SceneConfig, points: np.ndarray, normals: np.ndarray,
                    valid: np.ndarray | None = None) -> np.ndarray:
    """Irradiance per watt of a white light, for every spotlight: shape (n_lights, n).

    Includes the spot cone, Lambert cosine, inverse-square falloff and the
    cube's shadow.
    """
    n = len(points)
    pos = np.asarray(scene.rig.positions)
    axes = scene.rig.directions
    out = np.zeros((len(pos), n))
    if valid is None:
        valid = np.ones(n, dtype=bool)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return out
    p = points[idx]
    nrm = normals[idx]
    origin = p + _EPS * 10 * nrm  # shadow rays start just off the surface
    for k in range(len(pos)):
        to_light = pos[k] - p
        r = np.linalg.norm(to_light, axis=1)
        wl = to_light / r[:, None]
        cos_inc = np.einsum("ij,ij->i", nrm, wl)
        cone = cone_falloff(-(wl @ axes[k]), scene.rig.cone_half_angle, scene.rig.cone_blend)
        e = cone * np.maximum(cos_inc, 0.0) / (4.0 * math.pi * r * r)
        lit = e > 0.0
        if lit.any():
            tc, _ = _intersect_cube(origin[lit], wl[lit], scene, t_max=r[lit] - _EPS * 10)
            shadowed = np.isfinite(tc)
            e_lit = e[lit]
            e_lit[shadowed] = 0.0
            e[lit] = e_lit
        out[k, idx] = e
    return out


def spot_irradiance(scene: SceneConfig, light: int, on: bool, color_index: int, power: float,
                    points: np.ndarray, normals: np.ndarray) -> np.ndarray:
    """RGB irradiance (n, 3) from one spotlight in a given state."""
    if not on:
        return np.zeros((len(points), 3))
    e = unit_irradiance(scene, points, normals)[light]
    return (power * e)[:, None] * LIGHT_TINTS[color_index][None, :]


def _orthonormal_basis(n: np.ndarray):
    # branchless construction (Duff et al. 2017)
    sign = np.where(n[:, 2] >= 0.0, 1.0, -1.0)
    a = -1.0 / (sign + n[:, 2])
    b = n[:, 0] * n[:, 1] * a
    t = np.stack([1.0 + sign * n[:, 0] ** 2 * a, sign * b, -sign * n[:, 0]], axis=1)
    s = np.stack([b, sign + n[:, 1] ** 2 * a, -n[:, 1]], axis=1)
    return t, s


def cosine_hemisphere(normals: np.ndarray, u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    r = np.sqrt(u1)
    phi = 2.0 * math.pi * u2
    z = np.sqrt(np.maximum(0.0, 1.0 - u1))
    t, s = _orthonormal_basis(normals)
    d = (r * np.cos(phi))[:, None] * t + (r * np.sin(phi))[:, None] * s + z[:, None] * normals
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def camera_rays(scene: SceneConfig, spp: int, seed: int, stream: int) -> Rays:
    """Rays for every (pixel, sample), pixel-major: index = pixel * spp + sample.

    One sample goes through the pixel center; more samples are stratified on a
    square grid when spp is a perfect square and uniformly jittered otherwise.
    """
    size = scene.image_size
    n_pix = size * size
    pix = np.repeat(np.arange(n_pix), spp)
    smp = np.tile(np.arange(spp), n_pix)
    row, col = pix // size, pix % size
    if spp == 1:
        ox = oy = np.full(len(pix), 0.5)
    else:
        u = rng.uniform(seed, rng.STREAM_PIXELS, stream, pix, smp, 0)
        v = rng.uniform(seed, rng.STREAM_PIXELS, stream, pix, smp, 1)
        g = math.isqrt(spp)
        if g * g == spp:
            ox = (smp % g + u) / g
            oy = (smp // g + v) / g
        else:
            ox, oy = u, v
    half = math.tan(math.radians(scene.camera_fov) / 2.0)
    x = ((col + ox) / size * 2.0 - 1.0) * half
    y = (1.0 - (row + oy) / size * 2.0) * half
    fwd, right, up = scene.camera_basis()
    d = fwd[None, :] + x[:, None] * right[None, :] + y[:, None] * up[None, :]
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(np.asarray(scene.camera_position, dtype=np.float64), d.shape).copy()
    return Rays(o, d)


@dataclass
class PathSamples:
    """Per (pixel, sample) light-path data, independent of lighting and albedo."""
    primary: SurfaceHit
    direct: np.ndarray  # (n_lights, n) unit irradiance at the primary hit
    bounce_surface: np.ndarray  # (n,) shading class of the bounce hit, -1 if none
    bounce: np.ndarray  # (n_lights, n) unit irradiance at the bounce hit
    spp: int
    n_pixels: int


def trace_paths(scene: SceneConfig, settings: RenderSettings, stream: int) -> PathSamples:
    spp = settings.samples_per_pixel
    rays = camera_rays(scene, spp, settings.seed, stream)
    hit = intersect_scene(rays, scene)
    direct = unit_irradiance(scene, hit.point, hit.normal, hit.hit)
    n = len(rays.origin)
    bounce_surface = np.full(n, SURFACE_NONE)
    bounce = np.zeros_like(direct)
    if settings.bounce_count == 1:
        idx = np.flatnonzero(hit.hit)
        pix = idx // spp
        smp = idx % spp
        u1 = rng.uniform(settings.seed, rng.STREAM_PIXELS, stream, pix, smp, 2)
        u2 = rng.uniform(settings.seed, rng.STREAM_PIXELS, stream, pix, smp, 3)
        nrm = hit.normal[idx]
        d = cosine_hemisphere(nrm, u1, u2)
        sec = intersect_scene(Rays(hit.point[idx] + _EPS * 10 * nrm, d), scene)
        bounce_surface[idx] = sec.surface
        bounce[:, idx] = unit_irradiance(scene, sec.point, sec.normal, sec.hit)
    return PathSamples(hit, direct, bounce_surface, bounce, spp, scene.image_size ** 2)


def _albedo_table(scene: SceneConfig, cube_albedo) -> np.ndarray:
    # rows indexed by shading class: ground, cube
    return np.stack([np.asarray(scene.ground_albedo, dtype=np.float64),
                     np.asarray(cube_albedo, dtype=np.float64)])


def light_weights(on, color_index, power) -> np.ndarray:
    """Per-light RGB emission weights power * tint, shape (..., n_lights, 3); off lights weigh 0."""
    on = np.asarray(on, dtype=bool)
    p = np.where(on, np.asarray(power, dtype=np.float64), 0.0)
    return p[..., None] * LIGHT_TINTS[np.asarray(color_index)]


def shade(paths: PathSamples, weights: np.ndarray, scene: SceneConfig, cube_albedo) -> np.ndarray:
    """Per-sample linear RGB radiance (n, 3) for lights weighted by ``weights`` (n_lights, 3).

    L = albedo/pi * (E_direct(x) + albedo_bounce * E_direct(y)); the second term
    is the cosine-sampled one-bounce estimator.
    """
    alb = _albedo_table(scene, cube_albedo)
    surf = paths.primary.surface
    hit = surf != SURFACE_NONE
    rho = np.where(hit[:, None], alb[np.maximum(surf, 0)], 0.0)
    e_x = paths.direct.T @ weights  # (n, 3)
    bsurf = paths.bounce_surface
    rho_b = np.where((bsurf != SURFACE_NONE)[:, None], alb[np.maximum(bsurf, 0)], 0.0)
    e_y = paths.bounce.T @ weights
    return rho / math.pi * (e_x + rho_b * e_y)


def _pixel_mean(per_sample: np.ndarray, paths: PathSamples) -> np.ndarray:
    return per_sample.reshape(paths.n_pixels, paths.spp, -1).mean(axis=1)


def render_hdr(scene: SceneConfig, weights: np.ndarray, cube_albedo, settings: RenderSettings,
               stream: int = 0, paths: PathSamples | None = None) -> np.ndarray:
    """Linear radiance image (3, H, W)."""
    if paths is None:
        paths = trace_paths(scene, settings, stream)
    img = _pixel_mean(shade(paths, weights, scene, cube_albedo), paths)
    s = scene.image_size
    return img.T.reshape(3, s, s)


def srgb_encode(x: np.ndarray) -> np.ndarray:
    y = np.where(x <= 0.0031308, 12.92 * x, 1.055 * np.power(np.maximum(x, 0.0031308), 1.0 / 2.4) - 0.055)
    return np.where(x >= 1.0, 1.0, y)  # exact white; the formula lands one ulp short


def srgb_decode(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.04045, x / 12.92, np.power((np.maximum(x, 0.04045) + 0.055) / 1.055, 2.4))


def tone_map(hdr: np.ndarray, exposure: float) -> np.ndarray:
    """sRGB display values: sRGB(clamp(exposure * hdr, 0, 1))."""
    hdr = np.asarray(hdr, dtype=np.float64)
    if (hdr < 0).any():
        raise ValueError("tone_map expects non-negative radiance")
    return srgb_encode(np.clip(exposure * hdr, 0.0, 1.0))


def luminance(hdr: np.ndarray) -> np.ndarray:
    """Rec. 709 luminance of a (3, H, W) linear image."""
    return np.tensordot(LUMA, hdr, axes=(0, 0))


def reference_weights(scene: SceneConfig, power: float = 500.0) -> np.ndarray:
    """All spotlights on, white, equal power."""
    n = scene.n_lights
    return light_weights(np.ones(n, bool), np.full(n, 6), np.full(n, power))


# the calibration frame shows a cube of mid-palette hue; the percentile is
# dominated by the floor and the lit top face, not by the hue
CALIBRATION_OBJECT = 0


def calibrate_exposure(scene: SceneConfig, settings: RenderSettings, power: float = 500.0,
                       basis: "TransportBasis | None" = None, percentile: float = 95.0) -> float:
    """Exposure mapping the reference frame's 95th-percentile luminance to 1."""
    w = reference_weights(scene, power)
    if basis is None:
        basis = TransportBasis.build(scene, settings)
    hdr = basis.assemble(w[None], scene.albedo(CALIBRATION_OBJECT))[0]
    p = float(np.percentile(luminance(hdr), percentile))
    if not p > 0.0:
        raise CalibrationError("reference frame is black; cannot calibrate exposure")
    return 1.0 / p


def quantize(srgb: np.ndarray) -> np.ndarray:
    return np.round(np.clip(srgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def render_frame(scene: SceneConfig, on, color_index, power, object_id: int,
                 settings: RenderSettings, stream: int = 0) -> np.ndarray:
    """Trace one frame with its own sample stream and tone map it: sRGB (3, H, W) in [0, 1]."""
    if settings.exposure is None:
        raise CalibrationError("render_frame needs a calibrated exposure")
    hdr = render_hdr(scene, light_weights(on, color_index, power), scene.albedo(object_id),
                     settings, stream)
    return tone_map(hdr, settings.exposure)


@dataclass
class TransportBasis:
    """Pixel-averaged path data for one sample stream.

    ``direct[a, k]`` is the mean over samples of unit irradiance from light k at
    primary hits of shading class a (0 ground, 1 cube); ``bounce[a, b, k]`` the
    same for bounce hits of class b behind primary class a. Both (.., n_pixels).
    """
    direct: np.ndarray  # (2, K, P)
    bounce: np.ndarray  # (2, 2, K, P)
    image_size: int
    ground_albedo: np.ndarray

    @classmethod
    def from_paths(cls, scene: SceneConfig, paths: PathSamples) -> "TransportBasis":
        k = paths.direct.shape[0]
        p, s = paths.n_pixels, paths.spp
        direct = np.zeros((2, k, p))
        bounce = np.zeros((2, 2, k, p))
        surf = paths.primary.surface
        bsurf = paths.bounce_surface
        for a in (SURFACE_GROUND, SURFACE_CUBE):
            ma = (surf == a).astype(np.float64)
            direct[a] = (paths.direct * ma).reshape(k, p, s).mean(axis=2)
            for b in (SURFACE_GROUND, SURFACE_CUBE):
                mab = ma * (bsurf == b)
                bounce[a, b] = (paths.bounce * mab).reshape(k, p, s).mean(axis=2)
        return cls(direct, bounce, scene.image_size, np.asarray(scene.ground_albedo, dtype=np.float64))

    @classmethod
    def build(cls, scene: SceneConfig, settings: RenderSettings, stream: int = 0) -> "TransportBasis":
        return cls.from_paths(scene, trace_paths(scene, settings, stream))

    def object_response(self, cube_albedo) -> np.ndarray:
        """Per-light, per-channel radiance per unit weight, shape (K, 3, P)."""
        alb = np.stack([self.ground_albedo, np.asarray(cube_albedo, dtype=np.float64)])
        out = 0.0
        for a in (0, 1):
            term = self.direct[a][:, None, :]
            for b in (0, 1):
                term = term + alb[b][None, :, None] * self.bounce[a, b][:, None, :]
            out = out + alb[a][None, :, None] / math.pi * term
        return out

    def assemble(self, weights: np.ndarray, cube_albedo) -> np.ndarray:
        """Linear radiance for a batch of lightings (F, K, 3) -> (F, 3, H, W)."""
        resp = self.object_response(cube_albedo)
        hdr = np.einsum("fkc,kcp->fcp", weights, resp)
        s = self.image_size
        return np.maximum(hdr, 0.0).reshape(len(weights), 3, s, s)


def face_coverage(scene: SceneConfig) -> dict[int, int]:
    """Pixel-center hit counts per face id (0 ground, 1..6 cube); diagnostic for framing."""
    rays = camera_rays(scene, 1, 0, 0)
    hit = intersect_scene(rays, scene)
    faces, counts = np.unique(hit.face, return_counts=True)
    return {int(f): int(c) for f, c in zip(faces, counts)}


def object_mask(scene: SceneConfig) -> np.ndarray:
    """Boolean (H, W) mask of pixels whose centre ray hits the cube."""
    rays = camera_rays(scene, 1, 0, 0)
    hit = intersect_scene(rays, scene)
    return (hit.surface == 1).reshape(scene.image_size, scene.image_size)
