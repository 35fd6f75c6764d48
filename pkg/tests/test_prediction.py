import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from submap_align.errors import (
    ConfigError,
    MissingTensorError,
    PoseFormatError,
    TensorLengthError,
    TensorShapeError,
)
from submap_align.geometry import Intrinsics, Pose
from submap_align.prediction import (
    BundleDirectory,
    FramePrediction,
    StreamConfig,
    SubmapPrediction,
    confidence_filter,
    load_bundle,
    save_bundle,
    save_stream,
)

from helpers import random_submap


def seg(T, L, O):
    from submap_align.prediction import segment_stream

    return segment_stream(StreamConfig(T, 1, L, O))


def test_segmentation_examples():
    assert seg(6, 2, 2) == [[0, 1], [0, 1, 2, 3], [2, 3, 4, 5]]
    assert seg(4, 4, 1) == [[0, 1, 2, 3]]
    assert seg(7, 2, 2)[-1] == [4, 5, 6]


def test_stream_config_validation():
    with pytest.raises(ConfigError):
        StreamConfig(6, 1, 2, 3)
    with pytest.raises(ConfigError):
        StreamConfig(6, 1, 2, 0)
    with pytest.raises(ConfigError):
        StreamConfig(6, 0, 2, 2)


@settings(max_examples=200, deadline=None)
@given(T=st.integers(1, 60), L=st.integers(1, 10), O=st.integers(1, 10))
def test_segmentation_properties(T, L, O):
    if not O <= L <= T:
        return
    segs = seg(T, L, O)
    assert set().union(*map(set, segs)) == set(range(T))
    for a, b in zip(segs, segs[1:]):
        assert len(set(a) & set(b)) == min(O, len(a))


def _frame(conf, mask=None):
    conf = np.asarray(conf, dtype=np.float64).reshape(1, -1)
    w = conf.shape[1]
    mask = np.ones_like(conf, dtype=bool) if mask is None else np.asarray(mask).reshape(1, -1)
    return FramePrediction(0, 0, Intrinsics(1, 1, 0, 0, max(w, 1), 1), Pose.identity(),
                           np.zeros((1, w, 3)), conf, mask)


def test_confidence_filter_examples():
    f = _frame([1, 2, 3, 4, 5])
    assert confidence_filter(f, 60).tolist() == [[False, False, False, True, True]]
    assert confidence_filter(f, 0).tolist() == f.valid_mask.tolist()
    assert not confidence_filter(_frame([2, 2, 2, 2]), 60).any()


def test_confidence_filter_keeps_invalid_pixels_invalid():
    f = _frame([5, 1, 4, 3], mask=[False, True, True, True])
    kept = confidence_filter(f, 50)
    assert kept.tolist() == [[False, False, True, False]]


def test_confidence_filter_range():
    with pytest.raises(ValueError):
        confidence_filter(_frame([1, 2]), 101)


@settings(max_examples=100, deadline=None)
@given(
    conf=st.lists(st.floats(0, 1), min_size=1, max_size=60),
    pct=st.floats(0, 100),
)
def test_confidence_filter_fraction(conf, pct):
    f = _frame(conf)
    kept = confidence_filter(f, pct).sum()
    assert 0 <= kept <= (100 - pct) / 100 * len(conf) + 1


def _assert_same(a: SubmapPrediction, b: SubmapPrediction):
    assert a.k == b.k and a.overlap_count == b.overlap_count
    assert [f.key for f in a.frames] == [f.key for f in b.frames]
    for fa, fb in zip(a.frames, b.frames):
        assert fa.intrinsics == fb.intrinsics
        assert np.array_equal(fa.pose.matrix(), fb.pose.matrix())
        assert np.array_equal(fa.pointmap, fb.pointmap, equal_nan=True)
        assert np.array_equal(fa.confidence, fb.confidence)
        assert np.array_equal(fa.valid_mask, fb.valid_mask)


def _f32(sp: SubmapPrediction) -> SubmapPrediction:
    # the on-disk format is float32; start from representable values
    from dataclasses import replace

    return sp.with_frames([
        replace(f, pointmap=f.pointmap.astype(np.float32).astype(np.float64),
                confidence=f.confidence.astype(np.float32).astype(np.float64))
        for f in sp.frames
    ])


def test_bundle_roundtrip_bit_exact(tmp_path, rng):
    sp = _f32(random_submap(rng))
    save_bundle(sp, tmp_path / "b")
    _assert_same(sp, load_bundle(tmp_path / "b"))


def test_bundle_directory(tmp_path, rng):
    sps = [_f32(random_submap(rng, k=k)) for k in range(3)]
    save_stream(sps, tmp_path)
    d = BundleDirectory(tmp_path)
    assert len(d) == 3
    for k in range(3):
        _assert_same(sps[k], d[k])


def _saved(tmp_path, rng):
    sp = random_submap(rng, timestamps=(0,), cameras=(0,))
    save_bundle(sp, tmp_path)
    return sp.frames[0]


def test_missing_tensor(tmp_path, rng):
    _saved(tmp_path, rng)
    (tmp_path / "t000000_c00_conf.f32").unlink()
    with pytest.raises(MissingTensorError, match="t000000_c00_conf"):
        load_bundle(tmp_path)


def test_shape_mismatch(tmp_path, rng):
    f = _saved(tmp_path, rng)
    h, w = f.shape
    np.zeros((h - 1) * w, dtype="<f4").tofile(tmp_path / "t000000_c00_conf.f32")
    with pytest.raises(TensorShapeError, match=r"frame \(0, 0\)"):
        load_bundle(tmp_path)


def test_truncated_tensor(tmp_path, rng):
    _saved(tmp_path, rng)
    p = tmp_path / "t000000_c00_points.f32"
    p.write_bytes(p.read_bytes()[:-2])
    with pytest.raises(TensorLengthError, match="t000000_c00_points"):
        load_bundle(tmp_path)


def test_non_finite_pose(tmp_path, rng):
    import json

    _saved(tmp_path, rng)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["frames"][0]["pose"][3] = float("nan")
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(PoseFormatError, match=r"frame \(0, 0\)"):
        load_bundle(tmp_path)


def test_overlap_and_reference_poses(rng):
    sp = random_submap(rng, timestamps=(2, 3, 4, 5), cameras=(0, 1), overlap=2)
    assert sp.overlap_timestamps() == [2, 3]
    assert sp.reference_poses([2, 3]) == [sp.frame(2, 0).pose, sp.frame(3, 0).pose]
    first = random_submap(rng, k=0, overlap=0)
    assert first.overlap_timestamps() == []
