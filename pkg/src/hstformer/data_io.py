"""Dataset files, camera projection, and the synthetic motion generator.

Pose files are a small binary format (magic ``HSTP``) holding one sequence of
2D or 3D poses as little-endian float32; a JSON manifest ties the files of a
dataset together and carries the skeleton joint order, units, fps, camera,
and the 2D normalization constants.

The synthetic generator drives a fixed-bone-length 17-joint body through
smooth periodic joint rotations (forward kinematics) and projects it through
a pinhole camera, standing in for motion-capture data at desk scale.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .skeleton import JOINT_NAMES, NUM_JOINTS

POSE_MAGIC = b"HSTP"
POSE_VERSION = 1

MANIFEST_VERSION = 1


class DataError(ValueError):
    """Raised for malformed dataset files."""


# -- pose file ---------------------------------------------------------------

def save_pose_file(path, poses: np.ndarray) -> None:
    """Write a (T, J, C) array, C in {2, 3}, as float32."""
    poses = np.asarray(poses)
    if poses.ndim != 3 or poses.shape[2] not in (2, 3):
        raise DataError(f"pose array must be (T, J, C) with C in {{2,3}}, got {poses.shape}")
    if not np.isfinite(poses).all():
        raise DataError("pose array contains non-finite values")
    t, j, c = poses.shape
    with open(path, "wb") as f:
        f.write(POSE_MAGIC)
        f.write(struct.pack("<IIII", POSE_VERSION, t, j, c))
        f.write(np.ascontiguousarray(poses, dtype="<f4").tobytes())


def load_pose_file(path) -> np.ndarray:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != POSE_MAGIC:
        raise DataError(f"{path}: bad magic {raw[:4]!r}, not a pose file")
    version, t, j, c = struct.unpack("<IIII", raw[4:20])
    if version != POSE_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    if c not in (2, 3):
        raise DataError(f"{path}: channel count {c} not in {{2,3}}")
    expected = 20 + 4 * t * j * c
    if len(raw) != expected:
        raise DataError(f"{path}: payload is {len(raw) - 20} bytes, header implies {expected - 20}")
    poses = np.frombuffer(raw[20:], dtype="<f4").reshape(t, j, c)
    if not np.isfinite(poses).all():
        raise DataError(f"{path}: payload contains non-finite values")
    return poses.copy()


# -- camera ------------------------------------------------------------------

@dataclass(frozen=True)
class Camera:
    """Pinhole camera; rotation/translation map world mm to camera frame."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: tuple = ((1, 0, 0), (0, 1, 0), (0, 0, 1))
    translation: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "rotation": [list(r) for r in self.rotation],
                "translation": list(self.translation)}

    @staticmethod
    def from_dict(d: dict) -> "Camera":
        return Camera(d["fx"], d["fy"], d["cx"], d["cy"],
                      tuple(tuple(r) for r in d["rotation"]),
                      tuple(d["translation"]))


def project(poses3d: np.ndarray, camera: Camera) -> np.ndarray:
    """Project (T, J, 3) world-mm points to (T, J, 2) pixels."""
    p = np.asarray(poses3d, dtype=np.float64)
    rot = np.asarray(camera.rotation, dtype=np.float64)
    trans = np.asarray(camera.translation, dtype=np.float64)
    cam = p @ rot.T + trans
    z = cam[..., 2]
    if np.any(z <= 0):
        t, j = np.argwhere(z <= 0)[0]
        raise DataError(f"non-positive depth at frame {t}, joint {j}")
    u = camera.fx * cam[..., 0] / z + camera.cx
    v = camera.fy * cam[..., 1] / z + camera.cy
    return np.stack([u, v], axis=-1)


# -- manifest / dataset ------------------------------------------------------

@dataclass
class SequenceEntry:
    name: str
    action: str
    n_frames: int
    path_2d: str
    path_3d: str | None = None
    camera: Camera | None = None


@dataclass
class Dataset:
    """A loaded dataset: normalized 2D inputs and (optional) 3D targets in mm."""

    skeleton_names: tuple[str, ...]
    fps: float
    image_width: int
    image_height: int
    entries: list[SequenceEntry] = field(default_factory=list)
    poses_2d: list[np.ndarray] = field(default_factory=list)   # normalized to [-1, 1]
    poses_3d: list[np.ndarray] = field(default_factory=list)   # mm, or empty arrays

    def normalize_2d(self, pixels: np.ndarray) -> np.ndarray:
        w, h = self.image_width, self.image_height
        out = np.empty_like(pixels, dtype=np.float64)
        out[..., 0] = (pixels[..., 0] - w / 2.0) / (w / 2.0)
        out[..., 1] = (pixels[..., 1] - h / 2.0) / (w / 2.0)
        return out


def save_manifest(path, dataset_dir, entries: list[SequenceEntry], fps: float,
                  image_width: int, image_height: int) -> None:
    doc = {
        "format_version": MANIFEST_VERSION,
        "skeleton": list(JOINT_NAMES),
        "units": {"pose_2d": "pixels", "pose_3d": "millimeters"},
        "fps": fps,
        "image_width": image_width,
        "image_height": image_height,
        "sequences": [
            {"name": e.name, "action": e.action, "n_frames": e.n_frames,
             "path_2d": e.path_2d, "path_3d": e.path_3d,
             "camera": e.camera.to_dict() if e.camera else None}
            for e in entries
        ],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


def load_dataset(manifest_path) -> Dataset:
    manifest_path = Path(manifest_path)
    with open(manifest_path) as f:
        doc = json.load(f)
    if doc.get("format_version") != MANIFEST_VERSION:
        raise DataError(f"{manifest_path}: unsupported manifest version "
                        f"{doc.get('format_version')}")
    names = tuple(doc["skeleton"])
    if names != JOINT_NAMES:
        missing = set(JOINT_NAMES) - set(names)
        raise DataError(f"{manifest_path}: skeleton mismatch (missing {sorted(missing)})"
                        if missing else f"{manifest_path}: skeleton order mismatch")
    ds = Dataset(names, doc["fps"], doc["image_width"], doc["image_height"])
    base = manifest_path.parent
    for s in doc["sequences"]:
        entry = SequenceEntry(s["name"], s["action"], s["n_frames"], s["path_2d"],
                              s.get("path_3d"),
                              Camera.from_dict(s["camera"]) if s.get("camera") else None)
        p2d = load_pose_file(base / entry.path_2d)
        if p2d.shape[0] != entry.n_frames:
            raise DataError(f"{entry.path_2d}: header T={p2d.shape[0]} but manifest "
                            f"n_frames={entry.n_frames}")
        if p2d.shape[1] != NUM_JOINTS:
            raise DataError(f"{entry.path_2d}: J={p2d.shape[1]}, expected {NUM_JOINTS}")
        ds.entries.append(entry)
        ds.poses_2d.append(ds.normalize_2d(p2d.astype(np.float64)))
        if entry.path_3d:
            p3d = load_pose_file(base / entry.path_3d)
            if p3d.shape[:2] != (entry.n_frames, NUM_JOINTS):
                raise DataError(f"{entry.path_3d}: shape {p3d.shape[:2]} disagrees "
                                f"with manifest ({entry.n_frames}, {NUM_JOINTS})")
            ds.poses_3d.append(p3d.astype(np.float64))
        else:
            ds.poses_3d.append(np.zeros((0, NUM_JOINTS, 3)))
    return ds


def save_predictions(out_dir, dataset: Dataset, predictions: list[np.ndarray]) -> list[Path]:
    """Write one C=3 pose file per sequence, named after the entry."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for entry, pred in zip(dataset.entries, predictions):
        p = out_dir / f"{entry.name}_pred3d.bin"
        save_pose_file(p, np.asarray(pred, dtype=np.float32))
        paths.append(p)
    return paths


# -- synthetic motion ---------------------------------------------------------

# Bone tree: child joint -> (parent joint, rest offset in mm).  Offsets give an
# upright body facing +z (toward the camera), y pointing down (image style).
_BONES = {
    "RHip": ("Hip", (-130.0, 0.0, 0.0)),
    "RKnee": ("RHip", (0.0, 450.0, 0.0)),
    "RFoot": ("RKnee", (0.0, 450.0, 0.0)),
    "LHip": ("Hip", (130.0, 0.0, 0.0)),
    "LKnee": ("LHip", (0.0, 450.0, 0.0)),
    "LFoot": ("LKnee", (0.0, 450.0, 0.0)),
    "Spine": ("Hip", (0.0, -250.0, 0.0)),
    "Thorax": ("Spine", (0.0, -250.0, 0.0)),
    "Nose": ("Thorax", (0.0, -140.0, 60.0)),
    "Head": ("Thorax", (0.0, -220.0, 0.0)),
    "LShoulder": ("Thorax", (180.0, 30.0, 0.0)),
    "LElbow": ("LShoulder", (0.0, 280.0, 0.0)),
    "LWrist": ("LElbow", (0.0, 250.0, 0.0)),
    "RShoulder": ("Thorax", (-180.0, 30.0, 0.0)),
    "RElbow": ("RShoulder", (0.0, 280.0, 0.0)),
    "RWrist": ("RElbow", (0.0, 250.0, 0.0)),
}

MOTION_KINDS = ("walk_cycle", "arm_wave", "mixed")


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def _forward_kinematics(angles: dict[str, np.ndarray], root: np.ndarray) -> np.ndarray:
    """Compose per-joint rotations down the bone tree; returns (J, 3) mm."""
    pos = {"Hip": root}
    rot = {"Hip": angles.get("Hip", np.eye(3))}
    # JOINT_NAMES is topologically ordered (parents precede children).
    for name in JOINT_NAMES:
        if name == "Hip":
            continue
        parent, offset = _BONES[name]
        r_parent = rot[parent]
        pos[name] = pos[parent] + r_parent @ np.asarray(offset)
        rot[name] = r_parent @ angles.get(name, np.eye(3))
    return np.stack([pos[n] for n in JOINT_NAMES])


def default_camera(image_width: int = 1000, image_height: int = 1000) -> Camera:
    return Camera(fx=1150.0, fy=1150.0, cx=image_width / 2.0, cy=image_height / 2.0,
                  rotation=((1, 0, 0), (0, 1, 0), (0, 0, 1)),
                  translation=(0.0, 0.0, 4500.0))


def gen_synthetic(seed: int, n_frames: int, motion_kind: str = "walk_cycle",
                  fps: float = 25.0) -> tuple[np.ndarray, np.ndarray, Camera]:
    """Generate one paired sequence: (pixels_2d (T,J,2), world_3d (T,J,3), camera).

    Joint angles follow smooth periodic trajectories with seed-dependent
    amplitudes and phases, so bone lengths are exactly constant over time.
    """
    if n_frames < 1:
        raise DataError(f"n_frames must be >= 1, got {n_frames}")
    if motion_kind not in MOTION_KINDS:
        raise DataError(f"unknown motion kind {motion_kind!r}, choose from {MOTION_KINDS}")
    rng = np.random.Generator(np.random.PCG64(seed))
    period = 60.0 + rng.uniform(-8.0, 8.0)       # frames per gait cycle
    omega = 2.0 * np.pi / period
    phase = rng.uniform(0.0, 2.0 * np.pi)
    t = np.arange(n_frames, dtype=np.float64)

    legs = motion_kind in ("walk_cycle", "mixed")
    arms = motion_kind in ("arm_wave", "mixed")
    arm_swing = motion_kind == "walk_cycle"

    leg_amp = rng.uniform(0.45, 0.65)
    knee_amp = rng.uniform(0.35, 0.55)
    arm_amp = rng.uniform(0.35, 0.55)
    wave_amp = rng.uniform(0.6, 0.9)
    sway_amp = rng.uniform(0.04, 0.08)

    poses = np.empty((n_frames, NUM_JOINTS, 3))
    for i, ti in enumerate(t):
        ph = omega * ti + phase
        angles: dict[str, np.ndarray] = {}
        angles["Hip"] = _rot_y(sway_amp * np.sin(ph)) @ _rot_z(0.5 * sway_amp * np.sin(2 * ph))
        if legs:
            angles["LHip"] = _rot_x(leg_amp * np.sin(ph))
            angles["RHip"] = _rot_x(leg_amp * np.sin(ph + np.pi))
            angles["LKnee"] = _rot_x(knee_amp * (1 - np.cos(ph)) / 2)
            angles["RKnee"] = _rot_x(knee_amp * (1 - np.cos(ph + np.pi)) / 2)
        if arm_swing:
            angles["LShoulder"] = _rot_x(arm_amp * np.sin(ph + np.pi))
            angles["RShoulder"] = _rot_x(arm_amp * np.sin(ph))
            angles["LElbow"] = _rot_x(0.3 * arm_amp * (1 - np.cos(ph)))
            angles["RElbow"] = _rot_x(0.3 * arm_amp * (1 - np.cos(ph + np.pi)))
        if arms:
            angles["LShoulder"] = _rot_z(wave_amp * np.sin(ph)) @ _rot_x(-0.8)
            angles["RShoulder"] = _rot_z(-wave_amp * np.sin(ph + 0.7)) @ _rot_x(-0.8)
            angles["LElbow"] = _rot_x(-0.5 * wave_amp * (1 - np.cos(1.7 * omega * ti)))
            angles["RElbow"] = _rot_x(-0.5 * wave_amp * (1 - np.cos(1.7 * omega * ti + 1.1)))
        angles["Spine"] = _rot_x(0.06 * np.sin(2 * ph))
        # Gentle lateral drift keeps the subject in frame indefinitely.
        root = np.array([250.0 * np.sin(0.3 * omega * ti),
                         30.0 * np.sin(2 * ph), 150.0 * np.sin(0.21 * omega * ti)])
        poses[i] = _forward_kinematics(angles, root)

    camera = default_camera()
    pixels = project(poses, camera)
    return pixels, poses, camera


def write_synthetic_dataset(out_dir, seed: int, n_frames: int,
                            motion_kind: str = "walk_cycle",
                            n_sequences: int = 1, fps: float = 25.0) -> Path:
    """Generate sequences and write pose files plus a manifest; returns its path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    camera = default_camera()
    entries = []
    for i in range(n_sequences):
        pixels, poses, camera = gen_synthetic(seed + i, n_frames, motion_kind, fps)
        name = f"{motion_kind}_{seed + i:04d}"
        save_pose_file(out_dir / f"{name}_2d.bin", pixels.astype(np.float32))
        save_pose_file(out_dir / f"{name}_3d.bin", poses.astype(np.float32))
        entries.append(SequenceEntry(name, motion_kind, n_frames,
                                     f"{name}_2d.bin", f"{name}_3d.bin", camera))
    manifest = out_dir / "manifest.json"
    save_manifest(manifest, out_dir, entries, fps,
                  image_width=1000, image_height=1000)
    return manifest
