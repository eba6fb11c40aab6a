"""Loss, optimizer, schedule, augmentation, window sampling, and the
end-to-end training loop.

Training operates on root-relative 3D targets in millimeters.  The whole loop
is a pure function of (dataset, configs, seed): batch order, augmentation
coin flips, and initialization all derive from one seeded generator.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .model import EncoderConfig, forward, init_params, save_checkpoint
from .skeleton import JOINT_INDEX, default_skeleton, mirror_permutation
from .tensor import Tensor


class TrainError(ValueError):
    """Raised for invalid training configurations or datasets."""


@dataclass
class TrainConfig:
    epochs: int = 100
    base_lr: float = 0.001
    lr_decay_factor: float = 0.8
    lr_decay_every: int = 20
    batch_size: int = 8
    seed: int = 0
    frames: int = 9            # window length T
    interval: int = 1          # frame stride N inside a window
    flip_augment: bool = True
    test_time_flip: bool = False
    val_fraction: float = 0.15
    windows_per_epoch: int | None = None   # None: every admissible start once

    def __post_init__(self):
        if self.frames < 1 or self.interval < 1 or self.batch_size < 1:
            raise TrainError("frames, interval, and batch_size must be positive")


# -- loss ---------------------------------------------------------------------

def mpjpe_loss(pred: Tensor, gt: np.ndarray) -> Tensor:
    """Sum over frames and joints of Euclidean distances (not the mean)."""
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise TrainError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    diff = T.add(pred, Tensor(-gt))
    return T.tensor_sum(T.l2norm_last(diff))


# -- schedule / optimizer -----------------------------------------------------

def lr_at_epoch(epoch: int, config: TrainConfig) -> float:
    if epoch < 0:
        raise TrainError(f"epoch must be >= 0, got {epoch}")
    return config.base_lr * config.lr_decay_factor ** (epoch // config.lr_decay_every)


@dataclass
class AdamState:
    """Bias-corrected Adam moments, one buffer pair per parameter."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """One in-place update from the gradients currently held on the params."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise TrainError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.data.shape} for {name}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        mhat = m / (1.0 - b1 ** t)
        vhat = v / (1.0 - b2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + state.eps)


# -- sampling / augmentation --------------------------------------------------

def sample_window(length: int, start: int, frames: int, interval: int) -> list[int]:
    """Frame indices [start, start+N, ...]; indices past the end clamp to L-1."""
    if frames < 1 or interval < 1:
        raise TrainError(f"frames and interval must be >= 1, got {frames}, {interval}")
    if start < 0:
        raise TrainError(f"start must be >= 0, got {start}")
    return [min(start + i * interval, length - 1) for i in range(frames)]


def flip_pose(pose: np.ndarray) -> np.ndarray:
    """Mirror horizontally: negate x and swap each left/right joint pair.

    Works on (..., 17, 2) and (..., 17, 3) arrays; an involution.
    """
    perm = mirror_permutation()
    out = pose[..., perm, :].copy()
    out[..., 0] = -out[..., 0]
    return out


def tta_flip_average(forward_fn, x2d: np.ndarray) -> np.ndarray:
    """Average the plain prediction with the un-flipped prediction of the
    flipped input."""
    plain = forward_fn(x2d)
    flipped = flip_pose(forward_fn(flip_pose(x2d)))
    return 0.5 * (plain + flipped)


# -- dataset plumbing ---------------------------------------------------------

def root_relative(poses3d: np.ndarray) -> np.ndarray:
    """Subtract the Hip joint per frame."""
    return poses3d - poses3d[..., JOINT_INDEX["Hip"]:JOINT_INDEX["Hip"] + 1, :]


def split_sequences(poses_2d: list[np.ndarray], poses_3d: list[np.ndarray],
                    val_fraction: float):
    """Per-sequence time split: the trailing fraction of frames is held out."""
    train, val = [], []
    for p2, p3 in zip(poses_2d, poses_3d):
        if p3.shape[0] != p2.shape[0]:
            raise TrainError("2D/3D sequences must be paired frame-for-frame")
        cut = int(round(p2.shape[0] * (1.0 - val_fraction)))
        cut = max(1, min(cut, p2.shape[0]))
        train.append((p2[:cut], root_relative(p3[:cut])))
        if cut < p2.shape[0]:
            val.append((p2[cut:], root_relative(p3[cut:])))
    return train, val


def _window_starts(length: int, frames: int, interval: int) -> np.ndarray:
    span = (frames - 1) * interval
    n = max(1, length - span)
    return np.arange(n)


def evaluate_mpjpe(params, enc_cfg: EncoderConfig, partition,
                   val_pairs, interval: int, test_time_flip: bool = False) -> float:
    """Held-out MPJPE (mm): every frame scored once, using non-overlapping
    windows per interval phase with boundary replication."""
    frames = enc_cfg.frames
    total_err = 0.0
    total_joints = 0

    def predict(x2d: np.ndarray) -> np.ndarray:
        out = forward(Tensor(x2d), params, enc_cfg, partition)
        return out.data

    fn = (lambda x: tta_flip_average(predict, x)) if test_time_flip else predict
    for p2, p3 in val_pairs:
        length = p2.shape[0]
        for phase in range(interval):
            picked = np.arange(phase, length, interval)
            if picked.size == 0:
                continue
            for lo in range(0, picked.size, frames):
                chunk = picked[lo:lo + frames]
                pad = frames - chunk.size
                idx = np.concatenate([chunk, np.full(pad, chunk[-1], dtype=chunk.dtype)])
                pred = fn(p2[idx])
                err = np.linalg.norm(pred[:chunk.size] - p3[chunk], axis=-1)
                total_err += err.sum()
                total_joints += err.size
    if total_joints == 0:
        raise TrainError("validation split is empty")
    return total_err / total_joints


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    history: list[dict]            # epoch, lr, train_loss, val_mpjpe
    best_val_mpjpe: float
    initial_val_mpjpe: float


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["epoch", "lr", "train_loss", "val_mpjpe"])
        for row in history:
            writer.writerow([row["epoch"], repr(row["lr"]),
                             repr(row["train_loss"]), repr(row["val_mpjpe"])])


def train(poses_2d: list[np.ndarray], poses_3d: list[np.ndarray],
          train_cfg: TrainConfig, enc_cfg: EncoderConfig,
          out_dir=None) -> TrainResult:
    """Full training loop; returns final params plus the per-epoch history.

    When `out_dir` is given, a checkpoint is written on every validation
    improvement and the history CSV at the end.
    """
    if not poses_2d:
        raise TrainError("empty dataset")
    if enc_cfg.frames != train_cfg.frames:
        raise TrainError(f"window length mismatch: model T={enc_cfg.frames}, "
                         f"training T={train_cfg.frames}")
    _, partition = default_skeleton()
    rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
    params = init_params(enc_cfg, partition, seed=train_cfg.seed)
    state = AdamState()

    train_pairs, val_pairs = split_sequences(poses_2d, poses_3d, train_cfg.val_fraction)
    pool = []  # (sequence index, start frame)
    for si, (p2, _) in enumerate(train_pairs):
        for s in _window_starts(p2.shape[0], train_cfg.frames, train_cfg.interval):
            pool.append((si, int(s)))
    if not pool:
        raise TrainError("no training windows available")
    pool = np.array(pool)

    initial_val = evaluate_mpjpe(params, enc_cfg, partition, val_pairs,
                                 train_cfg.interval, train_cfg.test_time_flip)
    best_val = initial_val
    history: list[dict] = []
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for epoch in range(train_cfg.epochs):
        lr = lr_at_epoch(epoch, train_cfg)
        order = rng.permutation(len(pool))
        if train_cfg.windows_per_epoch is not None:
            order = order[:train_cfg.windows_per_epoch]
        losses = []
        for lo in range(0, len(order), train_cfg.batch_size):
            batch_ids = order[lo:lo + train_cfg.batch_size]
            xs, ys = [], []
            for si, start in pool[batch_ids]:
                p2, p3 = train_pairs[si]
                idx = sample_window(p2.shape[0], start, train_cfg.frames,
                                    train_cfg.interval)
                x, y = p2[idx], p3[idx]
                if train_cfg.flip_augment and rng.random() < 0.5:
                    x, y = flip_pose(x), flip_pose(y)
                xs.append(x)
                ys.append(y)
            x = Tensor(np.stack(xs))
            y = np.stack(ys)
            pred = forward(x, params, enc_cfg, partition)
            loss = T.scale(mpjpe_loss(pred, y), 1.0 / len(batch_ids))
            for p in params.values():
                p.zero_grad()
            loss.backward()
            adam_step(params, state, lr)
            losses.append(loss.item())
        val = evaluate_mpjpe(params, enc_cfg, partition, val_pairs,
                             train_cfg.interval, train_cfg.test_time_flip)
        history.append({"epoch": epoch, "lr": lr,
                        "train_loss": float(np.mean(losses)), "val_mpjpe": val})
        if val < best_val:
            best_val = val
            if out_dir is not None:
                save_checkpoint(out_dir / "best.ckpt", enc_cfg, params)
    if out_dir is not None:
        write_history_csv(out_dir / "history.csv", history)
    return TrainResult(params, history, best_val, initial_val)


# -- per-frame linear baseline ------------------------------------------------

def train_linear_baseline(poses_2d: list[np.ndarray], poses_3d: list[np.ndarray],
                          train_cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray, float]:
    """A per-frame linear lifter (34 -> 51 affine map) trained with the same
    loss, optimizer, schedule, and sampling as the transformer.

    Returns (W, b, held-out MPJPE)."""
    _, partition = default_skeleton()
    rng = np.random.Generator(np.random.PCG64(train_cfg.seed))
    j = poses_2d[0].shape[1]
    w = Tensor(rng.uniform(-1, 1, size=(2 * j, 3 * j)) / np.sqrt(2 * j),
               requires_grad=True)
    b = Tensor(np.zeros(3 * j), requires_grad=True)
    params = {"w": w, "b": b}
    state = AdamState()
    train_pairs, val_pairs = split_sequences(poses_2d, poses_3d, train_cfg.val_fraction)
    pool = []
    for si, (p2, _) in enumerate(train_pairs):
        for s in _window_starts(p2.shape[0], train_cfg.frames, train_cfg.interval):
            pool.append((si, int(s)))
    pool = np.array(pool)

    def predict(x2d: np.ndarray) -> np.ndarray:
        flat = x2d.reshape(x2d.shape[0], -1)
        out = flat @ w.data + b.data
        return out.reshape(x2d.shape[0], j, 3)

    for epoch in range(train_cfg.epochs):
        lr = lr_at_epoch(epoch, train_cfg)
        order = rng.permutation(len(pool))
        if train_cfg.windows_per_epoch is not None:
            order = order[:train_cfg.windows_per_epoch]
        for lo in range(0, len(order), train_cfg.batch_size):
            batch_ids = order[lo:lo + train_cfg.batch_size]
            xs, ys = [], []
            for si, start in pool[batch_ids]:
                p2, p3 = train_pairs[si]
                idx = sample_window(p2.shape[0], start, train_cfg.frames,
                                    train_cfg.interval)
                x, y = p2[idx], p3[idx]
                if train_cfg.flip_augment and rng.random() < 0.5:
                    x, y = flip_pose(x), flip_pose(y)
                xs.append(x)
                ys.append(y)
            x = np.stack(xs)
            y = np.stack(ys)
            flat = Tensor(x.reshape(x.shape[0] * x.shape[1], -1))
            pred = T.reshape(T.add(T.matmul(flat, w), b),
                             (x.shape[0], x.shape[1], j, 3))
            loss = T.scale(mpjpe_loss(pred, y), 1.0 / len(batch_ids))
            w.zero_grad()
            b.zero_grad()
            loss.backward()
            adam_step(params, state, lr)

    err_sum, n = 0.0, 0
    for p2, p3 in val_pairs:
        pred = predict(p2)
        e = np.linalg.norm(pred - p3, axis=-1)
        err_sum += e.sum()
        n += e.size
    return w.data, b.data, err_sum / n
