import numpy as np
import pytest

from occtrack.acceptance import refinement_trials
from occtrack.geometry import Pose, pose_error, random_pose, se3_exp, so3_exp
from occtrack.sdf_refine import (RefineConfig, RefinementUnreliableError, huber, refine_pose, residuals_and_jacobian,
                                 robust_cost)
from occtrack.simulator.shapes import l_solid, sphere
from occtrack.tsdf import TsdfVolume


def smooth_volume():
    # a smooth quadratic field sampled on a fine grid; trilinear interpolation
    # of it is nearly smooth, so finite differences are meaningful
    vol = TsdfVolume.from_bounds([-0.1] * 3, [0.1] * 3, 0.004, 0.012)
    c = vol.voxel_centers()
    f = 0.3 * c[:, 0] / 0.1 - 0.2 * c[:, 1] / 0.1 + 0.1 * c[:, 2] / 0.1
    vol.sdf = f.reshape(vol.dims)
    vol.weight[:] = 1.0
    return vol


def test_jacobian_matches_finite_differences():
    vol = smooth_volume()
    rng = np.random.default_rng(0)
    eps = 1e-6
    worst = 0.0
    for _ in range(50):
        T = random_pose(rng, max_angle=np.pi, trans_scale=0.02)
        pts = T.apply(rng.uniform(-0.05, 0.05, (20, 3)))
        r, J, ok = residuals_and_jacobian(T, pts, vol)
        assert ok.all()
        Jn = np.zeros_like(J)
        for k in range(6):
            d = np.zeros(6)
            d[k] = eps
            rp = vol.sample((se3_exp(d) @ T).inverse().apply(pts))[0]
            rm = vol.sample((se3_exp(-d) @ T).inverse().apply(pts))[0]
            Jn[:, k] = (rp - rm) / (2 * eps)
        worst = max(worst, np.linalg.norm(J - Jn) / np.linalg.norm(Jn))
    assert worst < 1e-3


def test_huber_quadratic_then_linear():
    s = np.array([0.0, 0.16, 0.25, 1.0])
    np.testing.assert_allclose(huber(s, 0.5), [0.0, 0.16, 0.25, 2 * 0.5 * 1.0 - 0.25])


def l_shape_volume():
    shape = l_solid(0.12, 0.04, 0.05)
    rad = shape.bounding_radius() + 0.03
    return shape, TsdfVolume.from_sdf(shape.sdf, [-rad] * 3, [rad] * 3)


def surface_points(shape, n, rng):
    rad = shape.bounding_radius()
    pts = rng.uniform(-rad, rad, (400000, 3))
    return pts[np.abs(shape.sdf(pts)) < 1e-3][:n]


def on_fused_surface(vol, pts, steps=15):
    # Newton steps onto the interpolated zero level of the volume
    for _ in range(steps):
        v, ok = vol.sample(pts)
        g, gok = vol.sample_gradient(pts)
        keep = ok & gok & (np.linalg.norm(g, axis=1) > 1e-6)
        pts, v, g = pts[keep], v[keep], g[keep]
        pts = pts - (v / (g**2).sum(1))[:, None] * g
    v, ok = vol.sample(pts)
    return pts[ok & (np.abs(v) < 1e-6)]


def test_already_optimal_pose_stays():
    shape, vol = l_shape_volume()
    T = Pose(so3_exp([0.2, 0.4, -0.1]), [0.01, -0.02, 0.5])
    obj = on_fused_surface(vol, surface_points(shape, 1500, np.random.default_rng(1)))
    assert len(obj) > 1000
    cloud = T.apply(obj)
    res = refine_pose(T, cloud, vol)
    r, t = pose_error(res.pose, T)
    assert r < 1e-4 and t < 1e-4
    assert res.cost < 1e-3


def test_perturbed_l_solid_recovers():
    trials = refinement_trials(n=6)
    for er, et, trace in trials:
        assert er < np.deg2rad(0.5) and et < 0.002
        assert all(b < a for a, b in zip(trace, trace[1:]))


def test_sphere_rotation_is_unconstrained_but_cost_does_not_grow():
    s = sphere(0.05)
    vol = TsdfVolume.from_sdf(s.sdf, [-0.09] * 3, [0.09] * 3)
    T = Pose(t=[0.0, 0.0, 0.5])
    cloud = T.apply(surface_points(s, 1500, np.random.default_rng(2)))
    init = T @ Pose(so3_exp([0.0, 0.3, 0.0]))
    res = refine_pose(init, cloud, vol)
    assert res.cost <= res.initial_cost
    assert np.linalg.norm(res.pose.t - T.t) < 1e-3


def test_translation_offset_recovered_for_sphere():
    s = sphere(0.05)
    vol = TsdfVolume.from_sdf(s.sdf, [-0.09] * 3, [0.09] * 3)
    T = Pose(t=[0.0, 0.0, 0.5])
    cloud = T.apply(surface_points(s, 1500, np.random.default_rng(3)))
    res = refine_pose(Pose(t=[0.008, -0.005, 0.5]), cloud, vol)
    assert res.cost <= res.initial_cost
    assert np.linalg.norm(res.pose.t - T.t) < 1e-3


def test_deterministic():
    shape, vol = l_shape_volume()
    T = Pose(so3_exp([0.1, 0.2, 0.3]), [0.0, 0.0, 0.5])
    cloud = T.apply(surface_points(shape, 3000, np.random.default_rng(4)))
    init = Pose(t=[0.01, 0.0, 0.0]) @ T @ Pose(so3_exp([0.05, 0.0, 0.0]))
    a = refine_pose(init, cloud, vol)
    b = refine_pose(init, cloud, vol)
    assert np.array_equal(a.pose.matrix, b.pose.matrix)
    assert a.cost_trace == b.cost_trace


def test_mostly_invalid_cloud_raises():
    shape, vol = l_shape_volume()
    cloud = np.random.default_rng(5).uniform(1.0, 2.0, (100, 3))
    with pytest.raises(RefinementUnreliableError):
        refine_pose(Pose(), cloud, vol)
    with pytest.raises(ValueError):
        refine_pose(Pose(), np.zeros((0, 3)), vol)


def test_never_increases_cost_from_bad_start():
    shape, vol = l_shape_volume()
    rng = np.random.default_rng(6)
    cloud = surface_points(shape, 1500, rng)
    for _ in range(5):
        init = se3_exp(np.r_[rng.normal(size=3) * 0.3, rng.normal(size=3) * 0.02])
        try:
            res = refine_pose(init, cloud, vol)
        except RefinementUnreliableError:
            continue
        assert res.cost <= robust_cost(init, cloud, vol, 0.5)
        assert res.cost == res.cost_trace[-1] and res.initial_cost == res.cost_trace[0]


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(max_outer_iterations=0).validate()
    with pytest.raises(ValueError):
        RefineConfig(huber_delta=0.0).validate()
