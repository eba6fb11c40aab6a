"""File format round-trips, camera projection, and the synthetic generator."""

import json

import numpy as np
import pytest

from hstformer.data_io import (
    Camera, DataError, gen_synthetic, load_dataset,
    load_pose_file, project, save_pose_file, save_predictions,
    write_synthetic_dataset,
)
from hstformer.metrics import frame_delta_mpjpe
from hstformer.skeleton import JOINT_INDEX, JOINT_NAMES

RNG = np.random.default_rng(55)


# -- pose file ----------------------------------------------------------------

def test_pose_file_roundtrip_bitwise(tmp_path):
    for c in (2, 3):
        poses = RNG.normal(size=(9, 17, c)).astype(np.float32)
        path = tmp_path / f"p{c}.bin"
        save_pose_file(path, poses)
        back = load_pose_file(path)
        assert back.dtype == np.float32
        assert np.array_equal(back, poses)
        # Write-read-write reproduces the bytes exactly.
        path2 = tmp_path / f"q{c}.bin"
        save_pose_file(path2, back)
        assert path.read_bytes() == path2.read_bytes()


def test_pose_file_bad_magic(tmp_path):
    path = tmp_path / "bad.bin"
    save_pose_file(path, np.zeros((2, 17, 2), dtype=np.float32))
    raw = bytearray(path.read_bytes())
    raw[:4] = b"JUNK"
    path.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        load_pose_file(path)


def test_pose_file_length_mismatch(tmp_path):
    path = tmp_path / "short.bin"
    save_pose_file(path, np.zeros((4, 17, 2), dtype=np.float32))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataError, match="bytes"):
        load_pose_file(path)


def test_pose_file_rejects_nan(tmp_path):
    poses = np.zeros((2, 17, 2))
    poses[0, 0, 0] = np.nan
    with pytest.raises(DataError):
        save_pose_file(tmp_path / "nan.bin", poses)


def test_pose_file_rejects_bad_rank(tmp_path):
    with pytest.raises(DataError):
        save_pose_file(tmp_path / "bad.bin", np.zeros((17, 2)))


# -- camera -------------------------------------------------------------------

def test_project_principal_point():
    cam = Camera(fx=1000.0, fy=1000.0, cx=512.0, cy=384.0,
                 translation=(0.0, 0.0, 2000.0))
    out = project(np.zeros((1, 1, 3)), cam)
    assert np.allclose(out[0, 0], [512.0, 384.0])


def test_project_depth_halves_offset():
    cam = Camera(fx=1000.0, fy=1000.0, cx=0.0, cy=0.0)
    near = project(np.array([[[100.0, 50.0, 1000.0]]]), cam)
    far = project(np.array([[[100.0, 50.0, 2000.0]]]), cam)
    assert np.allclose(near[0, 0], 2.0 * far[0, 0])


def test_project_rejects_nonpositive_depth():
    cam = Camera(fx=1000.0, fy=1000.0, cx=0.0, cy=0.0)
    with pytest.raises(DataError, match="frame 0, joint 1"):
        project(np.array([[[0, 0, 100.0], [0, 0, -5.0]]]), cam)


def test_project_matches_homogeneous_matrix_oracle():
    rng = np.random.default_rng(7)
    # Random rotation via QR.
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    cam = Camera(fx=1100.0, fy=1050.0, cx=500.0, cy=480.0,
                 rotation=tuple(map(tuple, q)), translation=(10.0, -20.0, 4000.0))
    poses = rng.normal(scale=300.0, size=(4, 17, 3))
    ours = project(poses, cam)

    k = np.array([[cam.fx, 0, cam.cx], [0, cam.fy, cam.cy], [0, 0, 1.0]])
    p_mat = k @ np.hstack([q, np.array(cam.translation)[:, None]])
    homog = np.concatenate([poses, np.ones(poses.shape[:2] + (1,))], axis=-1)
    proj = homog @ p_mat.T
    oracle = proj[..., :2] / proj[..., 2:3]
    assert np.max(np.abs(ours - oracle)) < 1e-9


def test_camera_requires_positive_focal():
    with pytest.raises(DataError):
        Camera(fx=-1.0, fy=1.0, cx=0.0, cy=0.0)


# -- synthetic generator ------------------------------------------------------

def bone_lengths(poses3d):
    from hstformer.data_io import _BONES
    out = []
    for child, (parent, _) in _BONES.items():
        ci, pi = JOINT_INDEX[child], JOINT_INDEX[parent]
        out.append(np.linalg.norm(poses3d[:, ci] - poses3d[:, pi], axis=-1))
    return np.stack(out)


def test_gen_synthetic_deterministic():
    a2, a3, _ = gen_synthetic(42, 50)
    b2, b3, _ = gen_synthetic(42, 50)
    assert np.array_equal(a2, b2)
    assert np.array_equal(a3, b3)
    c2, _, _ = gen_synthetic(43, 50)
    assert not np.array_equal(a2, c2)


@pytest.mark.parametrize("kind", ["walk_cycle", "arm_wave", "mixed"])
def test_gen_synthetic_constant_bone_lengths(kind):
    _, poses, _ = gen_synthetic(3, 120, kind)
    lengths = bone_lengths(poses)
    assert np.max(np.abs(lengths - lengths[:, :1])) < 1e-9


def test_gen_synthetic_rejects_bad_args():
    with pytest.raises(DataError):
        gen_synthetic(0, 0)
    with pytest.raises(DataError):
        gen_synthetic(0, 10, "moonwalk")


def test_frame_delta_mean_increases_with_interval():
    pixels, _, _ = gen_synthetic(11, 600, "walk_cycle")
    means = [frame_delta_mpjpe([pixels], n)[2] for n in (1, 3, 5, 7)]
    assert all(a < b for a, b in zip(means, means[1:]))


# -- dataset round-trip -------------------------------------------------------

def test_write_and_load_dataset(tmp_path):
    manifest = write_synthetic_dataset(tmp_path, seed=1, n_frames=40,
                                       n_sequences=2)
    ds = load_dataset(manifest)
    assert len(ds.entries) == 2
    assert ds.skeleton_names == JOINT_NAMES
    for p2, p3 in zip(ds.poses_2d, ds.poses_3d):
        assert p2.shape == (40, 17, 2)
        assert p3.shape == (40, 17, 3)
        assert np.abs(p2).max() <= 1.0  # normalized


def test_dataset_determinism(tmp_path):
    m1 = write_synthetic_dataset(tmp_path / "a", seed=9, n_frames=30)
    m2 = write_synthetic_dataset(tmp_path / "b", seed=9, n_frames=30)
    for name in ("walk_cycle_0009_2d.bin", "walk_cycle_0009_3d.bin"):
        assert (m1.parent / name).read_bytes() == (m2.parent / name).read_bytes()


def test_manifest_frame_count_mismatch(tmp_path):
    manifest = write_synthetic_dataset(tmp_path, seed=1, n_frames=40)
    doc = json.loads(manifest.read_text())
    doc["sequences"][0]["n_frames"] = 39
    manifest.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="39"):
        load_dataset(manifest)


def test_manifest_skeleton_mismatch(tmp_path):
    manifest = write_synthetic_dataset(tmp_path, seed=1, n_frames=10)
    doc = json.loads(manifest.read_text())
    doc["skeleton"][0] = "Pelvis"
    manifest.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="skeleton"):
        load_dataset(manifest)


def test_save_predictions_roundtrip(tmp_path):
    manifest = write_synthetic_dataset(tmp_path, seed=1, n_frames=10)
    ds = load_dataset(manifest)
    preds = [RNG.normal(size=(10, 17, 3)).astype(np.float32)]
    paths = save_predictions(tmp_path / "out", ds, preds)
    assert np.array_equal(load_pose_file(paths[0]), preds[0])
