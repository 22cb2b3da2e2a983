import json
import math

import cv2
import numpy as np
import pytest

from posekit.data import (
    DomainParams,
    SatelliteModel3D,
    augment_roll,
    generate_dataset,
    load_dataset,
    photometric_jitter,
    render,
    sample_pose,
    split_train_val,
)
from posekit.data.augment import NO_JITTER, apply_photometric
from posekit.data.dataset import render_sample
from posekit.errors import (
    FrustumSamplingExhausted,
    InvalidConfig,
    InvalidQuaternion,
    MalformedManifest,
    MissingImage,
    NonPositiveDepth,
)
from posekit.geometry import IDENTITY, CameraIntrinsics, Pose, project_point, quat_angular_distance

K = CameraIntrinsics()
MODEL = SatelliteModel3D.default()
CLEAN = DomainParams(noise_sigma=0.0, blur_sigma=(0.0, 0.0))


def test_default_model_invariants():
    assert len(MODEL.vertices) > 8
    assert MODEL.edges.min() >= 0 and MODEL.edges.max() < len(MODEL.vertices)
    assert np.linalg.norm(MODEL.vertices, axis=1).max() <= 3.0
    with pytest.raises(InvalidConfig):
        SatelliteModel3D(np.zeros((2, 3)), np.array([[0, 2]]), np.ones(1))


def test_sample_pose_deterministic_and_in_range():
    a, b = sample_pose(5), sample_pose(5)
    np.testing.assert_array_equal(a.orientation, b.orientation)
    np.testing.assert_array_equal(a.position, b.position)
    for s in range(200):
        p = sample_pose(s, (3.0, 20.0), K)
        assert 3.0 <= p.distance <= 20.0
        u, v = project_point(p.position, K)
        m = 0.1 * K.width
        assert m - 1e-9 <= u <= K.width - m + 1e-9 and m - 1e-9 <= v <= K.height - m + 1e-9


def test_sample_pose_distance_histogram_uniform():
    d = np.array([sample_pose(s, (3.0, 20.0), K).distance for s in range(10_000)])
    counts, _ = np.histogram(d, bins=10, range=(3.0, 20.0))
    expected = 1000
    sigma = math.sqrt(10_000 * 0.1 * 0.9)
    assert np.all(np.abs(counts - expected) < 3 * sigma)


def test_sample_pose_orientations_uniform():
    q = np.array([sample_pose(s).orientation for s in range(10_000)])
    angles = np.degrees(quat_angular_distance(q[:5000], q[5000:]))
    assert angles.mean() == pytest.approx(126.5, abs=2.0)


def test_sample_pose_errors():
    with pytest.raises(InvalidConfig):
        sample_pose(0, (5.0, 3.0))
    with pytest.raises(FrustumSamplingExhausted):
        sample_pose(0, (3.0, 20.0), K, margin=0.5)


def _bbox(img):
    ys, xs = np.nonzero(img)
    return xs.max() - xs.min(), ys.max() - ys.min()


def test_render_far_is_smaller_than_near():
    q = sample_pose(1).orientation
    near = render(MODEL, Pose(q, [0, 0, 5.0]), K, CLEAN)
    far = render(MODEL, Pose(q, [0, 0, 20.0]), K, CLEAN)
    (wn, hn), (wf, hf) = _bbox(near), _bbox(far)
    assert wf < wn and hf < hn


@pytest.mark.parametrize("seed", range(10))
def test_render_stays_in_dilated_hull(seed):
    pose = sample_pose(seed, (4.0, 20.0), K)
    img = render(MODEL, pose, K, CLEAN, seed)
    uv = np.array([project_point(p, K) for p in MODEL.camera_points(pose)], dtype=np.float32)
    hull = cv2.convexHull(uv)
    ys, xs = np.nonzero(img)
    margin = CLEAN.line_width + 2
    for x, y in zip(xs, ys):
        assert cv2.pointPolygonTest(hull, (float(x), float(y)), True) >= -margin


def test_render_deterministic_and_depth_checked():
    pose = sample_pose(3)
    dp = DomainParams.preset("pseudo_real")
    np.testing.assert_array_equal(render(MODEL, pose, K, dp, 9), render(MODEL, pose, K, dp, 9))
    with pytest.raises(NonPositiveDepth):
        render(MODEL, Pose(IDENTITY, [0, 0, 0.3]), K)


def test_domains_differ_in_pixel_statistics():
    def means(domain):
        return np.array([render_sample(i, 0, DomainParams.preset(domain), (3, 20), K, MODEL)[1].mean()
                         for i in range(60)])

    a, b = means("synthetic"), means("pseudo_real")
    grid = np.sort(np.concatenate([a, b]))
    ks = np.max(np.abs(np.searchsorted(np.sort(a), grid, side="right") / len(a)
                       - np.searchsorted(np.sort(b), grid, side="right") / len(b)))
    assert ks > 0.1


def test_unknown_domain_names_valid_ones():
    with pytest.raises(InvalidConfig, match="synthetic, pseudo_real"):
        DomainParams.preset("martian")


def test_generate_and_load_round_trip(tmp_path):
    entries = generate_dataset(12, 4, "synthetic", (3, 20), K, tmp_path)
    assert len(entries) == 12
    assert len(list(tmp_path.glob("*.png"))) == 12
    records = load_dataset(tmp_path)
    for e, r in zip(entries, records):
        np.testing.assert_allclose(r.pose.orientation, e["q_vbs2tango"], atol=1e-9)
        np.testing.assert_allclose(r.pose.position, e["r_Vo2To_vbs_true"], atol=1e-9)
        assert r.load_image().shape == (K.height, K.width)


def test_generate_is_reproducible_and_per_index(tmp_path):
    generate_dataset(40, 11, "pseudo_real", (3, 20), K, tmp_path / "a")
    generate_dataset(40, 11, "pseudo_real", (3, 20), K, tmp_path / "b")
    assert (tmp_path / "a/labels.json").read_bytes() == (tmp_path / "b/labels.json").read_bytes()
    generate_dataset(40, 11, "pseudo_real", (3, 20), K, tmp_path / "c", indices=[37])
    assert (tmp_path / "a/img000037.png").read_bytes() == (tmp_path / "c/img000037.png").read_bytes()


def _write_labels(tmp_path, entries):
    (tmp_path / "labels.json").write_text(json.dumps(entries))
    return tmp_path


def test_load_accepts_speed_fields_and_renormalizes(tmp_path):
    q = [1.0004, 0, 0, 0]
    recs = load_dataset(_write_labels(tmp_path, [
        {"filename": "a.png", "q_vbs2tango": q, "r_Vo2To_vbs_true": [0, 0, 5]},
    ]), require_images=False)
    assert recs[0].domain == "synthetic"
    assert np.linalg.norm(recs[0].pose.orientation) == pytest.approx(1.0, abs=1e-12)


def test_load_errors(tmp_path):
    with pytest.raises(InvalidQuaternion):
        load_dataset(_write_labels(tmp_path, [
            {"filename": "a.png", "q_vbs2tango": [0.5, 0, 0, 0], "r_Vo2To_vbs_true": [0, 0, 5]},
        ]), require_images=False)
    with pytest.raises(MissingImage):
        load_dataset(_write_labels(tmp_path, [
            {"filename": "a.png", "q_vbs2tango": [1, 0, 0, 0], "r_Vo2To_vbs_true": [0, 0, 5]},
        ]))
    with pytest.raises(MalformedManifest):
        load_dataset(_write_labels(tmp_path, [{"filename": "a.png"}]), require_images=False)
    (tmp_path / "labels.json").write_text("{not json")
    with pytest.raises(MalformedManifest):
        load_dataset(tmp_path)
    with pytest.raises(MalformedManifest):
        load_dataset(tmp_path / "missing")


def test_split_train_val():
    records = list(range(100))
    train, val = split_train_val(records, 0.15, seed=2)
    assert (len(train), len(val)) == (85, 15)
    assert set(train) | set(val) == set(records) and not set(train) & set(val)
    assert split_train_val(records, 0.15, seed=2) == (train, val)
    with pytest.raises(InvalidConfig):
        split_train_val(records, 1.0)


def test_roll_zero_is_identity():
    pose = sample_pose(2)
    img = render(MODEL, pose, K)
    out, p2 = augment_roll(img, pose, 0.0, K)
    np.testing.assert_array_equal(out, img)
    np.testing.assert_array_equal(p2.orientation, pose.orientation)
    np.testing.assert_array_equal(p2.position, pose.position)


def test_roll_inverse_recovers_pose():
    from posekit.data.augment import roll_pose

    pose = sample_pose(8)
    back = roll_pose(roll_pose(pose, 0.3), -0.3)
    np.testing.assert_allclose(back.position, pose.position, atol=1e-9)
    assert quat_angular_distance(back.orientation, pose.orientation) < 1e-7


@pytest.mark.parametrize("seed", range(6))
def test_roll_render_consistency(seed):
    rng = np.random.default_rng(seed)
    pose = sample_pose(100 + seed, (4.0, 12.0), K)
    theta = math.radians(rng.uniform(-25, 25))
    img = render(MODEL, pose, K, CLEAN).astype(float)
    rotated, pose2 = augment_roll(img.astype(np.uint8), pose, theta, K)
    direct = render(MODEL, pose2, K, CLEAN).astype(float)
    inner = (slice(10, K.height - 10), slice(10, K.width - 10))
    diff = np.abs(rotated.astype(float) - direct)[inner].mean() / 255.0
    assert diff < 0.03


def test_photometric_examples():
    img = np.full((8, 8), 128, np.uint8)
    np.testing.assert_array_equal(photometric_jitter(img, 1, NO_JITTER), img)
    out = apply_photometric(img.astype(np.float32) / 255, brightness=1.2)
    np.testing.assert_allclose(out, 1.2 * 128 / 255, rtol=1e-6)
    bright = apply_photometric(np.full((4, 4), 250, np.uint8), brightness=1.2)
    assert bright.max() == 255
    rgb = np.random.default_rng(0).integers(0, 256, (8, 8, 3)).astype(np.uint8)
    assert photometric_jitter(rgb, 3).shape == rgb.shape
    np.testing.assert_array_equal(photometric_jitter(rgb, 3), photometric_jitter(rgb, 3))
