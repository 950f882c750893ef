import math

import numpy as np
import pytest

from colorconstancy.renderer import (CalibrationError, Rays, RenderSettings, TransportBasis, calibrate_exposure,
                                     camera_rays, cone_falloff, face_coverage, intersect_scene, light_weights,
                                     luminance, object_mask, render_frame, render_hdr, shade, spot_irradiance,
                                     tone_map, trace_paths, unit_irradiance)
from colorconstancy.scene import build_scene

SCENE = build_scene()
OFF = np.zeros(8, bool)


def one_light(k, color=6, power=500.0):
    on = OFF.copy()
    on[k] = True
    return light_weights(on, np.full(8, color), np.full(8, power))


@pytest.fixture(scope="module")
def paths16():
    return trace_paths(SCENE, RenderSettings(samples_per_pixel=16, seed=3), stream=0)


# ---------------------------------------------------------------- geometry

def test_ray_down_onto_cube_top_and_ground():
    rays = Rays(np.array([[0.0, 0, 5], [5.0, 5, 5]]), np.array([[0.0, 0, -1], [0, 0, -1]]))
    hit = intersect_scene(rays, SCENE)
    assert hit.point[0] == pytest.approx([0, 0, 2])
    assert hit.normal[0] == pytest.approx([0, 0, 1])
    assert hit.face[0] == 5
    assert hit.point[1] == pytest.approx([5, 5, 0])
    assert hit.face[1] == 0


def test_ray_up_misses():
    hit = intersect_scene(Rays(np.array([[0.0, -4, 4]]), np.array([[0.0, 0, 1]])), SCENE)
    assert hit.face[0] == -1 and not hit.hit[0]


def test_ground_is_bounded():
    # parallel to the floor, just above it, going off to infinity beside the cube
    d = np.array([[1.0, 0, -0.05]])
    d /= np.linalg.norm(d)
    hit = intersect_scene(Rays(np.array([[0.0, -5, 1.0]]), d), SCENE)
    assert not hit.hit[0]  # lands at x = 20 > 10


def test_camera_rays_unit_and_normals_face_viewer():
    rays = camera_rays(SCENE, 4, seed=0, stream=0)
    assert np.abs(np.linalg.norm(rays.direction, axis=1) - 1).max() < 1e-9
    hit = intersect_scene(rays, SCENE)
    dots = np.einsum("ij,ij->i", hit.normal[hit.hit], rays.direction[hit.hit])
    assert (dots < 0).all()


def test_three_cube_faces_visible():
    cov = face_coverage(SCENE)
    assert cov.get(5, 0) > 0  # top
    sides = [f for f in (1, 2, 3, 4) if cov.get(f, 0) > 0]
    assert len(sides) == 2
    assert -1 not in cov  # everything in frame is floor or cube
    assert object_mask(SCENE).sum() == sum(cov[f] for f in cov if f >= 1)


# ---------------------------------------------------------------- irradiance

def test_cone_falloff_profile():
    c = np.cos(np.radians([0.0, 10.0, 22.0, 23.0, 90.0]))
    f = cone_falloff(c, 22.5, 0.15)
    assert f[0] == 1 and f[1] == 1
    assert 0 < f[2] < 1
    assert f[3] == 0 and f[4] == 0


def _on_axis_points(k, distances):
    pos = np.asarray(SCENE.rig.positions[k])
    axis = SCENE.rig.directions[k]
    pts = pos[None] + np.asarray(distances)[:, None] * axis[None]
    return pts, np.repeat(-axis[None], len(distances), axis=0)


def test_inverse_square():
    pts, nrm = _on_axis_points(0, [2.0, 4.0])
    e = unit_irradiance(SCENE, pts, nrm)[0]
    assert e[0] / e[1] == pytest.approx(4.0, rel=1e-12)
    assert e[0] == pytest.approx(1 / (4 * math.pi * 4.0), rel=1e-12)


def test_power_ratio_and_off():
    pts, nrm = _on_axis_points(3, [3.0])
    hi = spot_irradiance(SCENE, 3, True, 6, 1000.0, pts, nrm)
    lo = spot_irradiance(SCENE, 3, True, 6, 300.0, pts, nrm)
    assert hi[0, 0] / lo[0, 0] == pytest.approx(10 / 3, rel=1e-12)
    assert (spot_irradiance(SCENE, 3, False, 6, 1000.0, pts, nrm) == 0).all()


def test_outside_cone_is_dark():
    pos = np.asarray(SCENE.rig.positions[0])
    # a floor point far from where light 0 points
    pt = np.array([[9.0, -9.0, 0.0]])
    e = spot_irradiance(SCENE, 0, True, 6, 1000.0, pt, np.array([[0.0, 0, 1]]))
    ang = math.degrees(math.acos(np.dot((pt[0] - pos) / np.linalg.norm(pt[0] - pos), SCENE.rig.directions[0])))
    assert ang > SCENE.cone_half_angle
    assert (e == 0).all()


def test_tinted_light_is_channel_separable(paths16):
    img = render_hdr(SCENE, one_light(2, color=0), (1.0, 1.0, 1.0), RenderSettings(16, seed=3), paths=paths16)
    assert img[0].max() > 0
    assert (img[1] == 0).all() and (img[2] == 0).all()


def test_all_off_is_black(paths16):
    w = light_weights(OFF, np.zeros(8, int), np.full(8, 700.0))
    assert (render_hdr(SCENE, w, (1, .5, .5), RenderSettings(16), paths=paths16) == 0).all()
    img = render_frame(SCENE, OFF, np.zeros(8, int), np.full(8, 700.0), 3,
                       RenderSettings(samples_per_pixel=4, exposure=1.7))
    assert (img == 0).all()


# ---------------------------------------------------------------- transport properties

def _per_sample(paths, w, albedo):
    return shade(paths, w, SCENE, albedo).reshape(paths.n_pixels, paths.spp, 3)


def test_linearity_same_stream_exact(paths16):
    a, b = one_light(1, 0, 400.0), one_light(5, 4, 900.0)
    alb = (0.5, 1.0, 0.75)
    st = RenderSettings(16, seed=3)
    both = render_hdr(SCENE, a + b, alb, st, paths=paths16)
    sep = render_hdr(SCENE, a, alb, st, paths=paths16) + render_hdr(SCENE, b, alb, st, paths=paths16)
    assert np.abs(both - sep).max() <= 1e-12 * max(1.0, both.max())


def test_linearity_independent_streams_within_3_sigma():
    st = RenderSettings(samples_per_pixel=64, seed=11)
    a, b = one_light(0, 6, 800.0), one_light(3, 2, 600.0)
    alb = (1.0, 0.5, 0.5)
    runs = []
    for stream, w in ((1, a), (2, b), (3, a + b)):
        s = _per_sample(trace_paths(SCENE, st, stream), w, alb)
        runs.append((s.mean(axis=1), s.var(axis=1, ddof=1) / s.shape[1]))
    diff = runs[2][0] - runs[0][0] - runs[1][0]
    sigma = np.sqrt(runs[0][1] + runs[1][1] + runs[2][1])
    # pixels with zero variance in every estimate must agree exactly
    exact = sigma == 0
    assert np.abs(diff[exact]).max(initial=0.0) <= 1e-12
    z = np.abs(diff[~exact]) / sigma[~exact]
    assert np.mean(z > 3) < 0.01
    # the image-wide sum is a single well-averaged statistic
    assert abs(diff.sum()) <= 3 * math.sqrt((sigma ** 2).sum())


def test_adding_a_light_never_darkens(paths16):
    st = RenderSettings(16, seed=3)
    on = np.array([1, 0, 1, 0, 0, 1, 0, 0], bool)
    col = np.array([0, 1, 2, 3, 4, 5, 6, 0])
    pw = np.full(8, 500.0)
    base = render_hdr(SCENE, light_weights(on, col, pw), (0.5, 0.5, 1.0), st, paths=paths16)
    for k in np.flatnonzero(~on):
        more = on.copy()
        more[k] = True
        img = render_hdr(SCENE, light_weights(more, col, pw), (0.5, 0.5, 1.0), st, paths=paths16)
        assert (img >= base).all()


def test_face_away_from_lights_gets_only_indirect():
    st0 = RenderSettings(samples_per_pixel=16, bounce_count=0, seed=5)
    st1 = RenderSettings(samples_per_pixel=16, bounce_count=1, seed=5)
    p0, p1 = trace_paths(SCENE, st0, 0), trace_paths(SCENE, st1, 0)
    # face 2 (outward normal toward -x,-y after the yaw) faces away from light 0 at +x
    face2 = p0.primary.face == 2
    assert face2.any()
    assert (p0.direct[0, face2] == 0).all()
    w = one_light(0, 6, 1000.0)
    s0 = shade(p0, w, SCENE, (1, 1, 1))
    s1 = shade(p1, w, SCENE, (1, 1, 1))
    assert (s0[face2] == 0).all()
    assert s1[face2].sum() > 0


# ---------------------------------------------------------------- basis

def test_transport_basis_matches_shading(paths16):
    basis = TransportBasis.from_paths(SCENE, paths16)
    rs = np.random.default_rng(0)
    on = rs.random((3, 8)) < 0.5
    w = light_weights(on, rs.integers(0, 7, (3, 8)), rs.uniform(300, 1000, (3, 8)))
    alb = SCENE.albedo(17)
    fast = basis.assemble(w, alb)
    for f in range(3):
        ref = render_hdr(SCENE, w[f], alb, RenderSettings(16, seed=3), paths=paths16)
        assert np.abs(fast[f] - ref).max() <= 1e-10 * max(1.0, ref.max())


# ---------------------------------------------------------------- tone mapping and calibration

def test_tone_map_fixed_points():
    out = tone_map(np.array([0.0, 1.0, 0.5, 7.0]), 1.0)
    assert out[0] == 0 and out[1] == 1.0 and out[3] == 1.0
    assert out[2] == pytest.approx(0.7354, abs=1e-4)
    with pytest.raises(ValueError):
        tone_map(np.array([-1e-3]), 1.0)


@pytest.fixture(scope="module")
def basis64():
    return TransportBasis.build(SCENE, RenderSettings(samples_per_pixel=64))


def test_calibration_percentile(basis64):
    st = RenderSettings(samples_per_pixel=64)
    ex = calibrate_exposure(SCENE, st, basis=basis64)
    ref = basis64.assemble(light_weights(np.ones(8, bool), np.full(8, 6), np.full(8, 500.0))[None],
                           SCENE.albedo(0))[0]
    assert np.percentile(luminance(ex * ref), 95) == pytest.approx(1.0, abs=1e-6)
    ex2 = calibrate_exposure(SCENE, st, power=1000.0, basis=basis64)
    assert ex2 == pytest.approx(ex / 2, rel=1e-12)


def test_calibrated_floor_is_not_clipped(basis64):
    ex = calibrate_exposure(SCENE, RenderSettings(64), basis=basis64)
    ref = basis64.assemble(light_weights(np.ones(8, bool), np.full(8, 6), np.full(8, 500.0))[None],
                           SCENE.albedo(0))[0]
    img = tone_map(ref, ex)
    floor = ~object_mask(SCENE)
    vals = img[:, floor]
    ok = ((vals > 0) & (vals < 1)).all(axis=0)
    assert ok.mean() > 0.9


def test_calibration_rejects_black_reference(basis64):
    with pytest.raises(CalibrationError):
        calibrate_exposure(SCENE, RenderSettings(64), power=0.0, basis=basis64)


def test_render_frame_needs_exposure_and_is_deterministic():
    on = np.ones(8, bool)
    col = np.arange(8) % 7
    pw = np.full(8, 650.0)
    with pytest.raises(CalibrationError):
        render_frame(SCENE, on, col, pw, 0, RenderSettings(samples_per_pixel=4))
    st = RenderSettings(samples_per_pixel=4, exposure=1.6, seed=9)
    a = render_frame(SCENE, on, col, pw, 4, st, stream=12)
    b = render_frame(SCENE, on, col, pw, 4, st, stream=12)
    assert a.shape == (3, 32, 32)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_default_samples_per_pixel():
    assert RenderSettings().samples_per_pixel == 64
    with pytest.raises(ValueError):
        RenderSettings(samples_per_pixel=0)
