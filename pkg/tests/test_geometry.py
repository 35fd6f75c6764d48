import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submap_align.errors import DegenerateConfigurationError, InsufficientDataError, InvalidDepthError
from submap_align.geometry import (
    Intrinsics,
    Pose,
    Sim3,
    axis_angle_rotation,
    chordal_cost,
    chordal_rotation_average,
    project,
    random_rotation,
    rot_z,
    rotation_angle_deg,
    umeyama_align,
    unproject,
)

from helpers import grid_rotation_oracle, random_pose

INTR = Intrinsics(100.0, 100.0, 50.0, 50.0, 101, 101)


def test_pose_rejects_non_orthonormal():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, 2.0]), np.zeros(3))
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_pose_inverse_and_compose(rng):
    a, b = random_pose(rng), random_pose(rng)
    np.testing.assert_allclose((a @ a.inverse()).matrix(), np.eye(4), atol=1e-12)
    np.testing.assert_allclose((a @ b).matrix(), a.matrix() @ b.matrix(), atol=1e-12)
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose((a @ b).apply(x), a.apply(b.apply(x)), atol=1e-12)


def test_sim3_compose_and_inverse(rng):
    s = Sim3(2.5, random_rotation(rng), rng.normal(size=3))
    q = Sim3(0.7, random_rotation(rng), rng.normal(size=3))
    x = rng.normal(size=(4, 3))
    np.testing.assert_allclose((s @ q).apply(x), s.apply(q.apply(x)), atol=1e-12)
    np.testing.assert_allclose(s.inverse().apply(s.apply(x)), x, atol=1e-12)
    np.testing.assert_allclose((s @ q).matrix(), s.matrix() @ q.matrix(), atol=1e-12)


def test_project_optical_axis():
    p = project(np.array([0.0, 0.0, 7.0]), Pose.identity(), INTR)
    np.testing.assert_allclose(p.pixel, [50.0, 50.0])
    assert p.depth == 7.0 and p.in_front


def test_project_hand_example():
    p = project(np.array([1.0, 0.0, 2.0]), Pose.identity(), INTR)
    np.testing.assert_allclose(p.pixel, [100.0, 50.0])
    assert p.depth == 2.0


def test_project_behind_camera_is_flagged():
    p = project(np.array([[0.0, 0.0, -1.0], [0.0, 0.0, 0.0]]), Pose.identity(), INTR)
    assert not p.in_front.any()
    assert np.isnan(p.pixel).all()


def test_unproject_examples():
    np.testing.assert_allclose(unproject([50.0, 50.0], 3.0, Pose.identity(), INTR), [0, 0, 3])
    np.testing.assert_allclose(unproject([100.0, 50.0], 2.0, Pose.identity(), INTR), [1, 0, 2])
    with pytest.raises(InvalidDepthError):
        unproject([1.0, 1.0], 0.0, Pose.identity(), INTR)
    with pytest.raises(InvalidDepthError):
        unproject([1.0, 1.0], -2.0, Pose.identity(), INTR)


def test_project_unproject_roundtrip(rng):
    pose = random_pose(rng)
    cam = rng.uniform(-1, 1, (100, 3))
    cam[:, 2] = rng.uniform(0.5, 50, 100)
    world = pose.apply(cam)
    p = project(world, pose, INTR)
    back = unproject(p.pixel, p.depth, pose, INTR)
    np.testing.assert_allclose(back, world, rtol=1e-9, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(
    u=st.floats(-200, 300), v=st.floats(-200, 300), d=st.floats(0.1, 1000),
    seed=st.integers(0, 2**31 - 1),
)
def test_unproject_project_identity(u, v, d, seed):
    pose = random_pose(np.random.default_rng(seed))
    x = unproject([u, v], d, pose, INTR)
    p = project(x, pose, INTR)
    assert abs(p.depth - d) <= 1e-7 * d
    np.testing.assert_allclose(p.pixel, [u, v], rtol=1e-7, atol=1e-7 * max(1.0, abs(u), abs(v)))


def test_chordal_idempotent(rng):
    R = random_rotation(rng)
    np.testing.assert_allclose(chordal_rotation_average([R, R]), R, atol=1e-12)


def test_chordal_symmetric_pair():
    a = np.radians(20)
    np.testing.assert_allclose(chordal_rotation_average([rot_z(a), rot_z(-a)]), np.eye(3), atol=1e-12)


@pytest.mark.parametrize("angles", [(10, 30), (-50, 5, 12), (170, -170), (0, 90, 100, 33)])
def test_chordal_matches_grid_search(angles):
    rots = [rot_z(np.radians(a)) for a in angles]
    R = chordal_rotation_average(rots)
    want = grid_rotation_oracle(rots)
    assert rotation_angle_deg(R.T @ rot_z(np.radians(want))) < 0.1


def test_chordal_hand_example():
    R = chordal_rotation_average([rot_z(np.radians(10)), rot_z(np.radians(30))])
    assert rotation_angle_deg(R.T @ rot_z(np.radians(20))) < 0.1


def test_chordal_errors():
    with pytest.raises(InsufficientDataError):
        chordal_rotation_average([])
    opposed = [np.eye(3), rot_z(np.pi)]
    with pytest.raises(DegenerateConfigurationError):
        chordal_rotation_average(opposed)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(1, 6))
def test_chordal_cost_lower_bound(seed, n):
    r = np.random.default_rng(seed)
    base = random_rotation(r)
    rots = [base @ axis_angle_rotation(r.normal(size=3), r.uniform(0, 1.0)) for _ in range(n)]
    R = chordal_rotation_average(rots)
    cost = chordal_cost(R, rots)
    assert all(cost <= chordal_cost(Q, rots) + 1e-9 for Q in rots)
    assert all(cost <= chordal_cost(random_rotation(r), rots) + 1e-9 for _ in range(1000))


def test_umeyama_identity(rng):
    x = rng.normal(size=(10, 3))
    S = umeyama_align(x, x)
    assert abs(S.scale - 1) < 1e-12
    np.testing.assert_allclose(S.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(S.translation, 0, atol=1e-12)


def test_umeyama_recovers_similarity(rng):
    x = rng.normal(size=(20, 3))
    R = rot_z(np.radians(30))
    y = 2.0 * x @ R.T + [1.0, 2.0, 3.0]
    S = umeyama_align(x, y)
    assert abs(S.scale - 2.0) < 1e-9
    np.testing.assert_allclose(S.rotation, R, atol=1e-9)
    np.testing.assert_allclose(S.translation, [1, 2, 3], atol=1e-9)
    np.testing.assert_allclose(S.apply(x), y, atol=1e-9)


def test_umeyama_rigid_variant(rng):
    x = rng.normal(size=(20, 3))
    y = 3.0 * x
    assert umeyama_align(x, y, with_scale=False).scale == 1.0


def test_umeyama_errors():
    with pytest.raises(InsufficientDataError):
        umeyama_align(np.zeros((2, 3)), np.zeros((2, 3)))
    line = np.outer(np.arange(3.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateConfigurationError):
        umeyama_align(line, line)
