import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation

from occtrack.geometry import (CameraModel, DegenerateDepthError, Pose, SingularityError, back_project, compose,
                               depth_to_cloud, pose_from_row, pose_to_row, project, random_pose, se3_exp,
                               se3_log, so3_exp, so3_log)

finite = st.floats(-1.0, 1.0, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def twist(w, v):
    return np.concatenate([w, v])


def test_compose_identity_and_inverse(rng):
    assert compose(Pose(), Pose()).allclose(Pose(), 0.0)
    P = random_pose(rng, trans_scale=0.5)
    assert np.abs((P @ P.inverse()).matrix - np.eye(4)).max() < 1e-9


def test_compose_matches_sequential_application(rng):
    a, b = random_pose(rng), random_pose(rng)
    pts = rng.normal(size=(10, 3))
    np.testing.assert_allclose(compose(a, b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)


def test_log_identity_and_quarter_turn():
    np.testing.assert_array_equal(se3_log(Pose()), np.zeros(6))
    xi = se3_log(Pose(so3_exp([0.0, 0.0, np.pi / 2])))
    np.testing.assert_allclose(xi, [0, 0, np.pi / 2, 0, 0, 0], atol=1e-12)


def test_exp_zero_and_quarter_turn():
    assert se3_exp(np.zeros(6)).allclose(Pose(), 0.0)
    R = se3_exp([0, 0, np.pi / 2, 0, 0, 0]).R
    np.testing.assert_allclose(R, [[0, -1, 0], [1, 0, 0], [0, 0, 1]], atol=1e-12)


def test_so3_matches_scipy(rng):
    for _ in range(50):
        w = rng.normal(size=3) * rng.uniform(0, 3)
        np.testing.assert_allclose(so3_exp(w), Rotation.from_rotvec(w).as_matrix(), atol=1e-12)


def test_log_at_pi_is_singular():
    with pytest.raises(SingularityError):
        so3_log(so3_exp([np.pi, 0.0, 0.0]))


@given(vec3, st.floats(0.0, 3.1), vec3)
def test_exp_log_round_trip(axis, angle, v):
    n = np.linalg.norm(axis)
    w = axis / n * angle if n > 1e-3 else np.zeros(3)
    xi = twist(w, v)
    np.testing.assert_allclose(se3_log(se3_exp(xi)), xi, atol=1e-9)


@given(vec3, st.floats(0.0, 3.0))
def test_half_steps_compose_for_pure_rotation(axis, angle):
    n = np.linalg.norm(axis)
    w = axis / n * angle if n > 1e-3 else np.zeros(3)
    xi = twist(w, np.zeros(3))
    half = se3_exp(xi / 2)
    assert np.abs((half @ half).matrix - se3_exp(xi).matrix).max() < 1e-9


def test_long_composition_chain_stays_orthonormal(rng):
    P = Pose()
    for _ in range(1000):
        P = P @ random_pose(rng, trans_scale=0.01)
    assert np.abs(P.R.T @ P.R - np.eye(3)).max() < 1e-9
    assert abs(np.linalg.det(P.R) - 1.0) < 1e-9


def test_associativity(rng):
    for _ in range(20):
        a, b, c = (random_pose(rng) for _ in range(3))
        assert np.abs(((a @ b) @ c).matrix - (a @ (b @ c)).matrix).max() < 1e-9


def test_projection_formula():
    cam = CameraModel(500.0, 500.0, 240.0, 240.0, 480, 480)
    np.testing.assert_allclose(project(cam, [0.0, 0.0, 2.0]), [240, 240])
    np.testing.assert_allclose(project(cam, [0.1, 0.0, 1.0]), [290, 240])
    np.testing.assert_allclose(back_project(cam, [240, 240], 1.0), [0, 0, 1.0])
    np.testing.assert_allclose(back_project(cam, [290, 240], 1.0), [0.1, 0, 1.0])


def test_non_positive_depth_rejected():
    cam = CameraModel(500.0, 500.0, 240.0, 240.0, 480, 480)
    with pytest.raises(DegenerateDepthError):
        project(cam, [0.0, 0.0, 0.0])
    with pytest.raises(DegenerateDepthError):
        back_project(cam, [1.0, 1.0], -1.0)


def test_project_back_project_round_trip(rng):
    cam = CameraModel(520.0, 510.0, 319.5, 239.5, 640, 480)
    uv = rng.uniform([0, 0], [640, 480], size=(100, 2))
    z = rng.uniform(0.2, 4.0, size=100)
    X = back_project(cam, uv, z)
    np.testing.assert_allclose(project(cam, X), uv, atol=1e-9)
    np.testing.assert_allclose(back_project(cam, project(cam, X), X[:, 2]), X, atol=1e-9)


def test_depth_to_cloud_counts_valid_masked_pixels():
    cam = CameraModel(100.0, 100.0, 2.0, 2.0, 4, 4)
    depth = np.ones((4, 4))
    depth[0, 0] = 0.0
    mask = np.zeros((4, 4), bool)
    mask[:2, :2] = True
    cloud = depth_to_cloud(cam, depth, mask)
    assert cloud.shape == (3, 3)
    assert np.all(cloud[:, 2] == 1.0)


def test_pose_row_round_trip_is_exact(rng):
    P = random_pose(rng)
    row = pose_to_row(P)
    assert len(row) == 16
    Q = pose_from_row([float(repr(x)) for x in row])
    assert Q.allclose(P, 0.0)
