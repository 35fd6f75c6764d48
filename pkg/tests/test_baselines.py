import numpy as np
import pytest

from submap_align.baselines import (
    Sl4Transform,
    apply_sl4,
    pixel_correspondences,
    sim3_point_align,
    sim3_residual,
    sl4_point_align,
    transfer_residual,
    warp_pose_sl4,
)
from submap_align.deformation import default_lambda, tps_fit
from submap_align.errors import DegenerateConfigurationError
from submap_align.geometry import Pose, Sim3, random_rotation
from submap_align.prediction import SubmapPrediction
from submap_align.synth import DistortionSpec, SyntheticStream


def _random_h(rng):
    H = np.eye(4) + 0.1 * rng.normal(size=(4, 4))
    H[3, :3] = 0.01 * rng.normal(size=3)
    if np.linalg.det(H) < 0:
        H[0] *= -1
    return Sl4Transform.normalized(H)


def test_sim3_identity_and_exact(rng):
    x = rng.normal(size=(30, 3))
    S = sim3_point_align(x, x)
    assert sim3_residual(S, x, x) < 1e-12
    T = Sim3(1.7, random_rotation(rng), rng.normal(size=3))
    assert sim3_residual(sim3_point_align(x, T.apply(x)), x, T.apply(x)) < 1e-9


def test_sl4_identity(rng):
    x = rng.normal(size=(30, 3))
    H = sl4_point_align(x, x)
    np.testing.assert_allclose(H.H, np.eye(4), atol=1e-9)


def test_sl4_recovers_projective_map(rng):
    H0 = _random_h(rng)
    x = rng.uniform(-2, 2, (50, 3))
    y, ok = apply_sl4(H0, x)
    assert ok.all()
    H = sl4_point_align(x, y)
    np.testing.assert_allclose(H.H, H0.H, atol=1e-6)
    assert transfer_residual(H, x, y) < 1e-6


def test_sl4_projective_covariance(rng):
    H0, G = _random_h(rng), _random_h(rng)
    x = rng.uniform(-2, 2, (50, 3))
    y, _ = apply_sl4(H0, x)
    gx, _ = apply_sl4(G, x)
    H = sl4_point_align(gx, y)
    want = H0 @ G.inverse()
    probe = rng.uniform(-2, 2, (20, 3))
    a, _ = apply_sl4(H, probe)
    b, _ = apply_sl4(want, probe)
    assert np.max(np.linalg.norm(a - b, axis=1)) < 1e-6


def test_sl4_coplanar_is_degenerate(rng):
    x = np.column_stack([rng.normal(size=(40, 2)), np.zeros(40)])
    with pytest.raises(DegenerateConfigurationError):
        sl4_point_align(x, x)


def test_apply_sl4_plane_at_infinity():
    H = np.eye(4)
    H[3] = [0, 0, 1, 0]
    out, ok = apply_sl4(H, np.array([[1.0, 2.0, 0.0], [1.0, 2.0, 3.0]]))
    assert ok.tolist() == [False, True]
    assert np.isnan(out[0]).all()


def test_apply_sl4_matches_direct_multiply(rng):
    H = _random_h(rng)
    x = rng.normal(size=(25, 3))
    out, _ = apply_sl4(H, x)
    for p, q in zip(x, out):
        h = H.H @ np.array([p[0], p[1], p[2], 1.0])
        np.testing.assert_allclose(q, h[:3] / h[3], rtol=1e-12, atol=1e-12)


def test_sl4_determinant_checks():
    with pytest.raises(ValueError):
        Sl4Transform(2 * np.eye(4))
    with pytest.raises(DegenerateConfigurationError):
        Sl4Transform.normalized(np.diag([1.0, 1.0, 1.0, -1.0]))


def test_warp_pose_rigid_map_is_exact(rng):
    G = Pose(random_rotation(rng), rng.normal(size=3))
    pose = Pose(random_rotation(rng), rng.normal(size=3))
    warped = warp_pose_sl4(Sl4Transform(G.matrix()), pose)
    np.testing.assert_allclose(warped.matrix(), (G @ pose).matrix(), atol=1e-12)


def _single_image_pair(scene, spec, t=0, c=0):
    stream = SyntheticStream(scene, 2, 2, spec)
    a = SubmapPrediction(0, [stream[0].frame(t, c)], 0)
    b = SubmapPrediction(1, [stream[1].frame(t, c)], 2)
    return pixel_correspondences(a, b)


def test_case2_single_image_pair(small_scene):
    spec = DistortionSpec("case2", focal_factors={0: 1.0, 1: 1.05}, jitter_rot_deg=5,
                          jitter_trans=1, seed=2)
    src, dst = _single_image_pair(small_scene, spec)
    ext = small_scene.params.extent
    assert transfer_residual(sl4_point_align(src, dst), src, dst) < 1e-6 * ext
    assert sim3_residual(sim3_point_align(src, dst), src, dst) > 1e-3 * ext


def test_case1_sim3_exact(small_scene):
    stream = SyntheticStream(small_scene, 2, 2, DistortionSpec("case1", seed=5))
    src, dst = pixel_correspondences(stream[0], stream[1])
    S = sim3_point_align(src, dst)
    assert sim3_residual(S, src, dst) < 1e-9 * small_scene.params.extent


def test_case3_linear_maps_fall_short(small_scene):
    stream = SyntheticStream(small_scene, 2, 2, DistortionSpec("case3", seed=1))
    src, dst = _single_image_pair(small_scene, DistortionSpec("case3", seed=1))
    injected = sim3_residual(stream.true_pair_transform(1), src, dst)
    assert injected > 0
    sim_res = sim3_residual(sim3_point_align(src, dst), src, dst)
    sl4_res = transfer_residual(sl4_point_align(src, dst), src, dst)
    assert sim_res >= 0.1 * injected and sl4_res >= 0.1 * injected
    # a regularized TPS on the same correspondences absorbs the distortion
    tps = tps_fit(src, dst, lam=default_lambda(src))
    tps_res = float(np.sqrt(np.mean(np.sum((tps(src) - dst) ** 2, axis=1))))
    assert tps_res < 0.1 * injected
    assert sim_res > tps_res
