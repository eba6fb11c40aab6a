"""Command-line surface: data generation, training, evaluation, motion
statistics, gradient verification, complexity accounting, and the ablation
matrix.

Every run resolves its configuration from an optional key=value file plus
same-named command-line flags (flags win), writes the resolved config next to
its outputs, and exits 0 on success, 2 on config errors, 3 on data errors, or
4 on verification failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data_io, metrics, model, training
from .model import ENCODERS, EncoderConfig
from .skeleton import default_skeleton
from .tensor import Tensor, grad_check
from .training import TrainConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_VERIFY = 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# -- run configuration --------------------------------------------------------

_BOOL_KEYS = {"fusion_enabled", "flip_augment", "test_time_flip"}
_INT_KEYS = {"frames", "joints", "dim", "layers", "heads", "mlp_ratio", "epochs",
             "lr_decay_every", "batch_size", "seed", "interval",
             "windows_per_epoch", "gen_frames", "gen_sequences"}
_FLOAT_KEYS = {"base_lr", "lr_decay_factor", "val_fraction"}
_LIST_KEYS = {"encoder_order", "enabled_encoders"}
_STR_KEYS = {"dataset", "out", "checkpoint", "motion"}

KNOWN_KEYS = _BOOL_KEYS | _INT_KEYS | _FLOAT_KEYS | _LIST_KEYS | _STR_KEYS

_DEFAULTS = {
    "frames": 9, "joints": 17, "dim": 32, "layers": 6, "heads": 8, "mlp_ratio": 4,
    "encoder_order": list(ENCODERS), "enabled_encoders": list(ENCODERS),
    "fusion_enabled": True,
    "epochs": 100, "base_lr": 0.001, "lr_decay_factor": 0.8, "lr_decay_every": 20,
    "batch_size": 8, "seed": 0, "interval": 1, "flip_augment": True,
    "test_time_flip": False, "val_fraction": 0.15, "windows_per_epoch": None,
    "dataset": None, "out": None, "checkpoint": None,
    "motion": "walk_cycle", "gen_frames": 2000, "gen_sequences": 1,
}


def _parse_value(key: str, raw: str):
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes"):
            return True
        if raw.lower() in ("0", "false", "no"):
            return False
        raise CliError(f"config key {key}: expected a boolean, got {raw!r}", EXIT_CONFIG)
    if key in _INT_KEYS:
        if raw.lower() == "none":
            return None
        try:
            return int(raw)
        except ValueError:
            raise CliError(f"config key {key}: expected an integer, got {raw!r}", EXIT_CONFIG)
    if key in _FLOAT_KEYS:
        try:
            return float(raw)
        except ValueError:
            raise CliError(f"config key {key}: expected a number, got {raw!r}", EXIT_CONFIG)
    if key in _LIST_KEYS:
        return [p.strip() for p in raw.split(",") if p.strip()]
    return raw


def load_run_config(path) -> dict:
    cfg = {}
    with open(path) as f:
        for ln, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise CliError(f"{path}:{ln}: expected key=value, got {line!r}", EXIT_CONFIG)
            key, raw = (s.strip() for s in line.split("=", 1))
            if key not in KNOWN_KEYS:
                raise CliError(f"{path}:{ln}: unknown config key {key!r}", EXIT_CONFIG)
            cfg[key] = _parse_value(key, raw)
    return cfg


def resolve_config(args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(load_run_config(args.config))
    for key in KNOWN_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = _parse_value(key, value) if isinstance(value, str) and key not in _STR_KEYS else value
    return cfg


def write_resolved_config(cfg: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.txt", "w") as f:
        for key in sorted(cfg):
            value = cfg[key]
            if value is None:
                value = "none"
            elif isinstance(value, list):
                value = ",".join(value)
            f.write(f"{key}={value}\n")


def encoder_config_from(cfg: dict) -> EncoderConfig:
    try:
        return EncoderConfig(
            frames=cfg["frames"], joints=cfg["joints"], dim=cfg["dim"],
            layers=cfg["layers"], heads=cfg["heads"], mlp_ratio=cfg["mlp_ratio"],
            encoder_order=tuple(cfg["encoder_order"]),
            enabled_encoders=tuple(cfg["enabled_encoders"]),
            fusion_enabled=cfg["fusion_enabled"])
    except ValueError as e:
        raise CliError(str(e), EXIT_CONFIG)


def train_config_from(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=cfg["epochs"], base_lr=cfg["base_lr"],
            lr_decay_factor=cfg["lr_decay_factor"], lr_decay_every=cfg["lr_decay_every"],
            batch_size=cfg["batch_size"], seed=cfg["seed"], frames=cfg["frames"],
            interval=cfg["interval"], flip_augment=cfg["flip_augment"],
            test_time_flip=cfg["test_time_flip"], val_fraction=cfg["val_fraction"],
            windows_per_epoch=cfg["windows_per_epoch"])
    except ValueError as e:
        raise CliError(str(e), EXIT_CONFIG)


def _require(cfg: dict, key: str) -> str:
    if not cfg.get(key):
        raise CliError(f"missing required option --{key.replace('_', '-')}", EXIT_CONFIG)
    return cfg[key]


def _load_dataset(cfg: dict) -> data_io.Dataset:
    path = _require(cfg, "dataset")
    try:
        return data_io.load_dataset(path)
    except (OSError, data_io.DataError) as e:
        raise CliError(str(e), EXIT_DATA)


# -- commands -----------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = resolve_config(args)
    out = Path(_require(cfg, "out"))
    try:
        manifest = data_io.write_synthetic_dataset(
            out, seed=cfg["seed"], n_frames=cfg["gen_frames"],
            motion_kind=cfg["motion"], n_sequences=cfg["gen_sequences"])
    except data_io.DataError as e:
        raise CliError(str(e), EXIT_DATA)
    write_resolved_config(cfg, out)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(_require(cfg, "out"))
    ds = _load_dataset(cfg)
    enc_cfg = encoder_config_from(cfg)
    train_cfg = train_config_from(cfg)
    write_resolved_config(cfg, out)
    try:
        result = training.train(ds.poses_2d, ds.poses_3d, train_cfg, enc_cfg, out_dir=out)
    except training.TrainError as e:
        raise CliError(str(e), EXIT_DATA)
    print(f"initial val MPJPE {result.initial_val_mpjpe:.3f} mm, "
          f"best {result.best_val_mpjpe:.3f} mm over {len(result.history)} epochs")
    print(f"history: {out / 'history.csv'}; best checkpoint: {out / 'best.ckpt'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    out = Path(_require(cfg, "out"))
    ckpt = _require(cfg, "checkpoint")
    ds = _load_dataset(cfg)
    try:
        enc_cfg, params = model.load_checkpoint(ckpt)
    except (OSError, model.CheckpointError) as e:
        raise CliError(str(e), EXIT_DATA)
    _, partition = default_skeleton()
    write_resolved_config(cfg, out)

    def predict(x2d):
        return model.forward(Tensor(x2d), params, enc_cfg, partition).data

    fn = (lambda x: training.tta_flip_average(predict, x)) if cfg["test_time_flip"] else predict
    pairs = []
    predictions = []
    for entry, p2, p3 in zip(ds.entries, ds.poses_2d, ds.poses_3d):
        if p3.shape[0] == 0:
            raise CliError(f"sequence {entry.name} has no 3D ground truth", EXIT_DATA)
        gt = training.root_relative(p3)
        pred = _predict_sequence(fn, p2, enc_cfg.frames, cfg["interval"])
        pairs.append((entry.name, pred, gt))
        predictions.append(pred)
    report = metrics.MetricReport.compute(pairs)
    (out / "metrics.json").write_text(report.to_json() + "\n")
    report.write_csv(out / "metrics.csv")
    data_io.save_predictions(out / "predictions", ds, predictions)
    print(json.dumps(report.aggregate, sort_keys=True))
    return EXIT_OK


def _predict_sequence(fn, p2: np.ndarray, frames: int, interval: int) -> np.ndarray:
    """Score every frame once: non-overlapping windows per interval phase,
    boundary frames replicated."""
    length = p2.shape[0]
    pred = np.zeros((length, p2.shape[1], 3))
    for phase in range(interval):
        picked = np.arange(phase, length, interval)
        for lo in range(0, picked.size, frames):
            chunk = picked[lo:lo + frames]
            pad = frames - chunk.size
            idx = np.concatenate([chunk, np.full(pad, chunk[-1], dtype=chunk.dtype)])
            pred[chunk] = fn(p2[idx])[:chunk.size]
    return pred


def cmd_stats(args) -> int:
    cfg = resolve_config(args)
    out = Path(_require(cfg, "out"))
    ds = _load_dataset(cfg)
    write_resolved_config(cfg, out)
    means = {}
    for n in (1, 3, 5, 7):
        try:
            edges, counts, mean = metrics.frame_delta_mpjpe(ds.poses_2d, n)
        except metrics.MetricError as e:
            raise CliError(str(e), EXIT_DATA)
        metrics.write_histogram_csv(out / f"frame_delta_n{n}.csv", edges, counts)
        means[n] = mean
        print(f"N={n}: mean 2D frame-delta MPJPE {mean:.6f}")
    with open(out / "frame_delta_means.csv", "w") as f:
        f.write("interval,mean\n")
        for n, mean in means.items():
            f.write(f"{n},{repr(mean)}\n")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = resolve_config(args)
    rng = np.random.Generator(np.random.PCG64(cfg["seed"]))
    failures = []

    def check(name, fn, x, tol, h=1e-6):
        err = grad_check(fn, x, h=h)
        status = "ok" if err < tol else "FAIL"
        print(f"{name}: max relative error {err:.3e} (tol {tol:g}) {status}")
        if err >= tol:
            failures.append(name)

    from . import tensor as T
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(4, 2))
    check("matmul", lambda t: T.tensor_sum(T.matmul(t, Tensor(b))), a, 1e-6)
    g = rng.normal(size=5)
    bt = rng.normal(size=5)
    check("layer_norm",
          lambda t: T.tensor_sum(T.layer_norm(t, Tensor(g), Tensor(bt))),
          rng.normal(size=(2, 5)), 1e-6)
    sw = Tensor(rng.normal(size=6))
    check("softmax", lambda t: T.tensor_sum(T.mul(T.softmax(t), sw)),
          rng.normal(size=6), 1e-6)
    check("gelu", lambda t: T.tensor_sum(T.gelu(t)), rng.normal(size=(3, 3)), 1e-6)

    # Full model at a small instance: gradient w.r.t. the 2D input.
    enc_cfg = EncoderConfig(frames=4, dim=8, layers=1)
    _, partition = default_skeleton()
    params = model.init_params(enc_cfg, partition, seed=cfg["seed"])
    target = rng.normal(size=(4, 17, 3))
    x0 = rng.normal(size=(4, 17, 2))

    def loss_fn(t):
        return training.mpjpe_loss(model.forward(t, params, enc_cfg, partition), target)

    check("full_model_loss", loss_fn, x0, 1e-4, h=1e-5)

    if failures:
        print(f"gradcheck failed: {', '.join(failures)}", file=sys.stderr)
        return EXIT_VERIFY
    print("all gradient checks passed")
    return EXIT_OK


def cmd_count_params(args) -> int:
    cfg = resolve_config(args)
    enc_cfg = encoder_config_from(cfg)
    _, partition = default_skeleton()
    total = model.param_count(enc_cfg, partition)
    flops = model.flops_estimate(enc_cfg, partition)
    enumerated = sum(int(np.prod(s)) if s else 1
                     for _, s in model.param_layout(enc_cfg, partition))
    print(f"T={enc_cfg.frames} J={enc_cfg.joints} D={enc_cfg.dim} "
          f"layers={enc_cfg.layers} heads={enc_cfg.heads} mlp_ratio={enc_cfg.mlp_ratio}")
    for enc in enc_cfg.enabled_canonical():
        sub = EncoderConfig(frames=enc_cfg.frames, dim=enc_cfg.dim,
                            layers=enc_cfg.layers, heads=enc_cfg.heads,
                            mlp_ratio=enc_cfg.mlp_ratio,
                            encoder_order=(enc,), enabled_encoders=(enc,),
                            fusion_enabled=False)
        enc_params = model.param_count(sub, partition) - (2 * enc_cfg.dim * 2 + enc_cfg.dim * 3 + 3)
        enc_flops = model.flops_estimate(sub, partition)
        print(f"  {enc}: {enc_params:,} params, {enc_flops / 1e9:.3f} GMACs")
    print(f"total parameters (analytic): {total:,} ({total / 1e6:.2f} M)")
    print(f"total parameters (enumerated): {enumerated:,}")
    print(f"forward multiply-accumulates: {flops:,} ({flops / 1e9:.2f} G)")
    print("published reference points at T=81, D=32, 6 layers: "
          "22.81 M params / 3.94 G and 22.72 M params / 2.12 G "
          "(the two published figures disagree; counts above are this "
          "implementation's exact numbers)")
    if total != enumerated:
        print("analytic and enumerated parameter counts disagree", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


# -- ablation matrix ----------------------------------------------------------

COMPONENT_COMBOS = [
    # (model id, enabled encoders, fusion)
    (1, ("STE",), False),
    (2, ("STE", "JTTE"), False),
    (3, ("STE", "JTTE", "BTTE"), False),
    (4, ("STE", "JTTE", "BTTE", "PTTE"), False),
    (5, ("STE", "JTTE", "BTTE"), True),
    (6, ("STE", "JTTE", "BTTE", "PTTE"), True),
]

AGGREGATION_ORDERS = [
    ("local_to_global", ("STE", "JTTE", "BTTE", "PTTE")),
    ("global_to_local", ("PTTE", "BTTE", "JTTE", "STE")),
]


def _ablation_cells(cfg: dict) -> list[dict]:
    cells = []
    for mid, enabled, fusion in COMPONENT_COMBOS:
        cells.append({"group": "components", "label": f"model{mid}",
                      "enabled": list(enabled), "order": list(enabled),
                      "fusion": fusion, "frames": cfg["frames"],
                      "interval": cfg["interval"]})
    for label, order in AGGREGATION_ORDERS:
        cells.append({"group": "aggregation", "label": label,
                      "enabled": list(ENCODERS), "order": list(order),
                      "fusion": True, "frames": cfg["frames"],
                      "interval": cfg["interval"]})
    for frames in (9, 27):
        for interval in (1, 3, 5, 7):
            cells.append({"group": "frames_interval",
                          "label": f"T{frames}_N{interval}",
                          "enabled": list(ENCODERS), "order": list(ENCODERS),
                          "fusion": True, "frames": frames, "interval": interval})
    return cells


def _run_ablation_cell(payload):
    cell, cfg, out_dir = payload
    cell_dir = Path(out_dir) / cell["group"] / cell["label"]
    cell_cfg = dict(cfg)
    cell_cfg.update(frames=cell["frames"], interval=cell["interval"],
                enabled_encoders=cell["enabled"], encoder_order=cell["order"],
                fusion_enabled=cell["fusion"])
    digest = hashlib.sha256(
        json.dumps(cell_cfg, sort_keys=True, default=str).encode()).hexdigest()[:12]
    row = {"group": cell["group"], "label": cell["label"], "config_hash": digest,
           "params": "", "val_mpjpe": "", "error": ""}
    try:
        enc_cfg = encoder_config_from(cell_cfg)
        train_cfg = train_config_from(cell_cfg)
        _, partition = default_skeleton()
        row["params"] = model.param_count(enc_cfg, partition)
        ds = data_io.load_dataset(cell_cfg["dataset"])
        result = training.train(ds.poses_2d, ds.poses_3d, train_cfg, enc_cfg,
                                out_dir=cell_dir)
        row["val_mpjpe"] = repr(result.best_val_mpjpe)
    except Exception as e:  # record and continue; one bad cell must not stop the run
        row["error"] = f"{type(e).__name__}: {e}"
    return row


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    out = Path(_require(cfg, "out"))
    _require(cfg, "dataset")
    write_resolved_config(cfg, out)
    cells = _ablation_cells(cfg)
    workers = max(1, int(os.environ.get("HSTF_THREADS", "1")))
    payloads = [(cell, cfg, str(out)) for cell in cells]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_ablation_cell, payloads))
    else:
        rows = [_run_ablation_cell(p) for p in payloads]
    results = out / "ablation.csv"
    with open(results, "w") as f:
        f.write("group,label,config_hash,params,val_mpjpe,error\n")
        for row in rows:
            f.write(f"{row['group']},{row['label']},{row['config_hash']},"
                    f"{row['params']},{row['val_mpjpe']},{row['error']}\n")
    print(f"wrote {results} ({len(rows)} cells)")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value run configuration file")
    p.add_argument("--frames", type=int, dest="frames")
    p.add_argument("--interval", type=int, dest="interval")
    p.add_argument("--layers", type=int, dest="layers")
    p.add_argument("--dim", type=int, dest="dim")
    p.add_argument("--seed", type=int, dest="seed")
    p.add_argument("--out", dest="out")
    p.add_argument("--heads", type=int, dest="heads")
    p.add_argument("--mlp-ratio", type=int, dest="mlp_ratio")
    p.add_argument("--epochs", type=int, dest="epochs")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--base-lr", type=float, dest="base_lr")
    p.add_argument("--val-fraction", type=float, dest="val_fraction")
    p.add_argument("--windows-per-epoch", type=int, dest="windows_per_epoch")
    p.add_argument("--dataset", dest="dataset")
    p.add_argument("--encoders", dest="enabled_encoders",
                   help="comma list from STE,JTTE,BTTE,PTTE")
    p.add_argument("--order", dest="encoder_order", help="comma list, a permutation of --encoders")
    p.add_argument("--no-fusion", dest="fusion_enabled", action="store_false", default=None)
    p.add_argument("--no-flip", dest="flip_augment", action="store_false", default=None)
    p.add_argument("--tta", dest="test_time_flip", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hstformer",
        description="Hierarchical spatial-temporal 2D-to-3D pose lifting toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in [
        ("gen-data", cmd_gen_data, "generate a synthetic paired 2D/3D dataset"),
        ("train", cmd_train, "train a model and write checkpoint + history"),
        ("eval", cmd_eval, "evaluate a checkpoint and write a metric report"),
        ("stats", cmd_stats, "frame-delta motion statistics for N in {1,3,5,7}"),
        ("gradcheck", cmd_gradcheck, "verify analytic gradients against finite differences"),
        ("count-params", cmd_count_params, "exact parameter and MAC counts"),
        ("ablate", cmd_ablate, "run the component/ordering/grid ablation matrix"),
    ]:
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "gen-data":
            p.add_argument("--motion", dest="motion", choices=data_io.MOTION_KINDS)
            p.add_argument("--sequences", type=int, dest="gen_sequences")
            p.add_argument("--gen-frames", type=int, dest="gen_frames")
        if name == "eval":
            p.add_argument("--checkpoint", dest="checkpoint")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # `gen-data --frames` means the generated frame count.
    if args.command == "gen-data" and args.frames is not None and args.gen_frames is None:
        args.gen_frames = args.frames
        args.frames = None
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
