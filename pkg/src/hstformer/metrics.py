"""Pose evaluation metrics: MPJPE, Procrustes-aligned MPJPE, PCK, AUC, and
the frame-delta motion statistic.

All functions are pure and operate on numpy arrays of shape (T, J, 3) for 3D
metrics (millimeters) or (T, J, 2) for the 2D delta statistic.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

DEFAULT_PCK_THRESHOLD_MM = 150.0
AUC_THRESHOLDS_MM = np.arange(5.0, 151.0, 5.0)  # 5, 10, ..., 150


class MetricError(ValueError):
    """Raised for malformed metric inputs."""


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    return pred, gt


def joint_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-joint Euclidean distances, shape (T, J)."""
    pred, gt = _check_pair(pred, gt)
    return np.linalg.norm(pred - gt, axis=-1)


def mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean Euclidean distance over all frames and joints."""
    return float(joint_errors(pred, gt).mean())


def similarity_align(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, bool]:
    """Least-squares similarity transform (rotation, uniform scale, translation,
    no reflection) mapping one frame's `pred` points onto `gt`.

    Returns (aligned pred, degenerate flag).  Rank-deficient point sets fall
    back to translation-only alignment and are flagged.
    """
    mu_p = pred.mean(axis=0)
    mu_g = gt.mean(axis=0)
    p = pred - mu_p
    g = gt - mu_g
    norm_p = np.sqrt((p * p).sum())
    if norm_p == 0.0:
        return pred - mu_p + mu_g, True
    cov = g.T @ p
    u, s, vt = np.linalg.svd(cov)
    if np.linalg.matrix_rank(cov) < pred.shape[1]:
        return pred - mu_p + mu_g, True
    sign = np.sign(np.linalg.det(u @ vt))
    d = np.ones(pred.shape[1])
    d[-1] = sign
    rot = u @ np.diag(d) @ vt
    scale = (s * d).sum() / (norm_p * norm_p)
    return scale * p @ rot.T + mu_g, False


def p_mpjpe(pred: np.ndarray, gt: np.ndarray) -> float:
    """MPJPE after per-frame least-squares similarity alignment of pred to gt."""
    pred, gt = _check_pair(pred, gt)
    errors = []
    for t in range(pred.shape[0]):
        aligned, _ = similarity_align(pred[t], gt[t])
        errors.append(np.linalg.norm(aligned - gt[t], axis=-1))
    return float(np.mean(errors))


def pck(pred: np.ndarray, gt: np.ndarray, threshold_mm: float = DEFAULT_PCK_THRESHOLD_MM) -> float:
    """Percentage of joints with error strictly below the threshold."""
    if threshold_mm <= 0:
        raise MetricError(f"threshold must be positive, got {threshold_mm}")
    return float((joint_errors(pred, gt) < threshold_mm).mean() * 100.0)


def auc(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean PCK over the 5..150 mm grid, as a fraction in [0, 1]."""
    errs = joint_errors(pred, gt)
    return float(np.mean([(errs < th).mean() for th in AUC_THRESHOLDS_MM]))


@dataclass
class MetricReport:
    """Per-sequence and aggregate metric values."""

    sequences: list[dict] = field(default_factory=list)
    aggregate: dict = field(default_factory=dict)

    @staticmethod
    def compute(pairs: list[tuple[str, np.ndarray, np.ndarray]],
                pck_threshold_mm: float = DEFAULT_PCK_THRESHOLD_MM) -> "MetricReport":
        """`pairs` is a list of (name, pred, gt) with (T, J, 3) arrays."""
        rows = []
        all_pred, all_gt = [], []
        for name, pred, gt in pairs:
            rows.append({
                "name": name,
                "n_frames": int(np.asarray(pred).shape[0]),
                "mpjpe_mm": mpjpe(pred, gt),
                "p_mpjpe_mm": p_mpjpe(pred, gt),
                "pck_pct": pck(pred, gt, pck_threshold_mm),
                "auc": auc(pred, gt),
            })
            all_pred.append(np.asarray(pred, dtype=np.float64).reshape(-1, pred.shape[-2], 3))
            all_gt.append(np.asarray(gt, dtype=np.float64).reshape(-1, gt.shape[-2], 3))
        pred = np.concatenate(all_pred)
        gt = np.concatenate(all_gt)
        agg = {
            "n_sequences": len(rows),
            "n_frames": int(pred.shape[0]),
            "mpjpe_mm": mpjpe(pred, gt),
            "p_mpjpe_mm": p_mpjpe(pred, gt),
            "pck_pct": pck(pred, gt, pck_threshold_mm),
            "auc": auc(pred, gt),
        }
        return MetricReport(rows, agg)

    def to_json(self) -> str:
        return json.dumps({"sequences": self.sequences, "aggregate": self.aggregate},
                          indent=2, sort_keys=True)

    def write_csv(self, path) -> None:
        fields = ["name", "n_frames", "mpjpe_mm", "p_mpjpe_mm", "pck_pct", "auc"]
        with open(path, "w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=fields)
            writer.writeheader()
            for row in self.sequences:
                writer.writerow(row)


def frame_delta_mpjpe(sequences_2d: list[np.ndarray], interval: int,
                      n_bins: int = 20) -> tuple[np.ndarray, np.ndarray, float]:
    """Distribution of 2D MPJPE between frames i and i+interval.

    Returns (bin_edges, counts, mean).  `sequences_2d` holds (T, J, 2) arrays.
    """
    if interval < 1:
        raise MetricError(f"interval must be >= 1, got {interval}")
    deltas = []
    for seq in sequences_2d:
        seq = np.asarray(seq, dtype=np.float64)
        if seq.shape[0] > interval:
            d = np.linalg.norm(seq[interval:] - seq[:-interval], axis=-1).mean(axis=-1)
            deltas.append(d)
    if not deltas:
        raise MetricError(f"no sequence longer than interval {interval}")
    deltas = np.concatenate(deltas)
    counts, edges = np.histogram(deltas, bins=n_bins)
    return edges, counts, float(deltas.mean())


def write_histogram_csv(path, edges: np.ndarray, counts: np.ndarray) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            writer.writerow([repr(float(lo)), repr(float(hi)), int(c)])
