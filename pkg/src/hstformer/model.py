"""Hierarchical spatial-temporal transformer for 2D-to-3D pose lifting.

The network embeds a T x J x 2 keypoint sequence to T x J x D features, runs
up to four transformer encoders that slice the feature tensor differently
(per-frame joints, per-joint trajectories, per-body-part trajectories, whole
poses over time), fuses their outputs with a learned linear map, and regresses
per-frame 3D coordinates.

Parameters live in an ordered name -> Tensor mapping whose enumeration order
is produced by ``param_layout`` and shared by initialization, counting, and
checkpoint serialization.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, asdict

import numpy as np

from . import tensor as T
from .skeleton import BodyPartPartition, NUM_JOINTS, default_skeleton, validate_partition
from .tensor import Tensor

ENCODERS = ("STE", "JTTE", "BTTE", "PTTE")

CHECKPOINT_MAGIC = b"HSTW"
CHECKPOINT_VERSION = 1


class ConfigError(ValueError):
    """Raised for inconsistent encoder configurations."""


class CheckpointError(ValueError):
    """Raised for malformed or mismatched checkpoint files."""


def pick_heads(width: int, preferred: int = 8) -> int:
    """Largest head count <= preferred that divides the token width."""
    for h in range(min(preferred, width), 0, -1):
        if width % h == 0:
            return h
    return 1


@dataclass(frozen=True)
class EncoderConfig:
    frames: int = 81          # T
    joints: int = NUM_JOINTS  # J
    dim: int = 32             # D, per-joint feature width
    layers: int = 6           # N_en, layers per encoder
    heads: int = 8            # preferred head count; per-encoder value divides width
    mlp_ratio: int = 4        # feed-forward hidden width multiplier
    encoder_order: tuple[str, ...] = ENCODERS
    enabled_encoders: tuple[str, ...] = ENCODERS
    fusion_enabled: bool = True

    def __post_init__(self):
        if self.frames < 1 or self.layers < 1 or self.dim < 1:
            raise ConfigError("frames, layers, and dim must be positive")
        if self.joints != NUM_JOINTS:
            raise ConfigError(f"only {NUM_JOINTS}-joint skeletons are supported, got {self.joints}")
        for e in self.encoder_order:
            if e not in ENCODERS:
                raise ConfigError(f"unknown encoder {e!r}")
        if set(self.encoder_order) != set(self.enabled_encoders):
            raise ConfigError(
                f"encoder_order {self.encoder_order} must be a permutation of "
                f"enabled_encoders {self.enabled_encoders}")
        if not self.enabled_encoders:
            raise ConfigError("at least one encoder must be enabled")

    def enabled_canonical(self) -> tuple[str, ...]:
        """Enabled encoders in the fixed STE/JTTE/BTTE/PTTE order (fusion input order)."""
        return tuple(e for e in ENCODERS if e in self.enabled_encoders)

    def token_width(self, encoder: str, part_size: int | None = None) -> int:
        if encoder in ("STE", "JTTE"):
            return self.dim
        if encoder == "BTTE":
            if part_size is None:
                raise ConfigError("BTTE token width needs a part size")
            return part_size * self.dim
        if encoder == "PTTE":
            return self.joints * self.dim
        raise ConfigError(f"unknown encoder {encoder!r}")

    def heads_for(self, width: int) -> int:
        return pick_heads(width, self.heads)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_order"] = list(self.encoder_order)
        d["enabled_encoders"] = list(self.enabled_encoders)
        return d

    @staticmethod
    def from_dict(d: dict) -> "EncoderConfig":
        d = dict(d)
        d["encoder_order"] = tuple(d["encoder_order"])
        d["enabled_encoders"] = tuple(d["enabled_encoders"])
        return EncoderConfig(**d)


# -- parameter layout ---------------------------------------------------------

def _layer_shapes(prefix: str, width: int, ratio: int):
    hidden = ratio * width
    yield f"{prefix}.ln1.gamma", (width,)
    yield f"{prefix}.ln1.beta", (width,)
    for p in ("q", "k", "v", "o"):
        yield f"{prefix}.attn.w{p}", (width, width)
        yield f"{prefix}.attn.b{p}", (width,)
    yield f"{prefix}.ln2.gamma", (width,)
    yield f"{prefix}.ln2.beta", (width,)
    yield f"{prefix}.mlp.w1", (width, hidden)
    yield f"{prefix}.mlp.b1", (hidden,)
    yield f"{prefix}.mlp.w2", (hidden, width)
    yield f"{prefix}.mlp.b2", (width,)


def param_layout(config: EncoderConfig,
                 partition: BodyPartPartition) -> list[tuple[str, tuple[int, ...]]]:
    """Ordered (name, shape) list of every learnable tensor.

    Order: embedding, then enabled encoders in canonical STE/JTTE/BTTE/PTTE
    order (positional encoding first, then layers 0..N_en-1), then the fusion
    weight (if enabled), then the regression head.  This order is the
    checkpoint serialization contract.
    """
    validate_partition(partition)
    T_, J, D = config.frames, config.joints, config.dim
    out: list[tuple[str, tuple[int, ...]]] = [
        ("embed.w", (2, D)),
        ("embed.ln.gamma", (D,)),
        ("embed.ln.beta", (D,)),
    ]
    for enc in config.enabled_canonical():
        if enc == "STE":
            out.append(("ste.pos", (J, D)))
            for layer in range(config.layers):
                out.extend(_layer_shapes(f"ste.layer{layer}", D, config.mlp_ratio))
        elif enc == "JTTE":
            out.append(("jtte.pos", (T_, D)))
            for layer in range(config.layers):
                out.extend(_layer_shapes(f"jtte.layer{layer}", D, config.mlp_ratio))
        elif enc == "BTTE":
            for k, size in enumerate(partition.sizes):
                w = size * D
                out.append((f"btte.part{k}.pos", (T_, w)))
                for layer in range(config.layers):
                    out.extend(_layer_shapes(f"btte.part{k}.layer{layer}", w, config.mlp_ratio))
        elif enc == "PTTE":
            w = J * D
            out.append(("ptte.pos", (T_, w)))
            for layer in range(config.layers):
                out.extend(_layer_shapes(f"ptte.layer{layer}", w, config.mlp_ratio))
    if config.fusion_enabled:
        n = len(config.enabled_encoders)
        out.append(("fusion.w", (n * D, D)))
    out.append(("head.w", (D, 3)))
    out.append(("head.b", (3,)))
    return out


def init_params(config: EncoderConfig, partition: BodyPartPartition,
                seed: int = 0) -> dict[str, Tensor]:
    """Instantiate all parameters: fan-in-scaled uniform weights, zero biases,
    unit LN gains, small-variance positional encodings.  Deterministic per seed."""
    rng = np.random.Generator(np.random.PCG64(seed))
    params: dict[str, Tensor] = {}
    for name, shape in param_layout(config, partition):
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = np.ones(shape)
        elif leaf == "beta" or leaf.startswith("b"):
            data = np.zeros(shape)
        elif leaf == "pos":
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return params


def param_count(config: EncoderConfig, partition: BodyPartPartition) -> int:
    """Closed-form scalar count; must equal the enumerated total exactly."""
    D, J, T_, L, r = (config.dim, config.joints, config.frames,
                      config.layers, config.mlp_ratio)

    def per_layer(w: int) -> int:
        # 2 LNs (2w each) + 4 attn projections (w^2 + w) + 2 mlp linears.
        return 4 * w + 4 * (w * w + w) + (w * r * w + r * w) + (r * w * w + w)

    total = 2 * D + 2 * D  # embedding projection + its LN affine
    for enc in config.enabled_canonical():
        if enc == "STE":
            total += J * D + L * per_layer(D)
        elif enc == "JTTE":
            total += T_ * D + L * per_layer(D)
        elif enc == "BTTE":
            for size in partition.sizes:
                w = size * D
                total += T_ * w + L * per_layer(w)
        elif enc == "PTTE":
            w = J * D
            total += T_ * w + L * per_layer(w)
    if config.fusion_enabled:
        total += len(config.enabled_encoders) * D * D
    total += D * 3 + 3
    return total


def flops_estimate(config: EncoderConfig, partition: BodyPartPartition) -> int:
    """Multiply-accumulate count of one forward pass at the configured T.

    Counts the dense matmuls (projections, attention score/apply, feed-forward,
    embedding, fusion, head); normalizations and softmax are omitted.
    """
    D, J, T_, L, r = (config.dim, config.joints, config.frames,
                      config.layers, config.mlp_ratio)

    def encoder_macs(batch: int, n: int, w: int) -> int:
        proj = 4 * batch * n * w * w
        attn = 2 * batch * n * n * w
        mlp = 2 * r * batch * n * w * w
        return L * (proj + attn + mlp)

    total = T_ * J * 2 * D  # embedding
    for enc in config.enabled_canonical():
        if enc == "STE":
            total += encoder_macs(T_, J, D)
        elif enc == "JTTE":
            total += encoder_macs(J, T_, D)
        elif enc == "BTTE":
            for size in partition.sizes:
                total += encoder_macs(1, T_, size * D)
        elif enc == "PTTE":
            total += encoder_macs(1, T_, J * D)
    if config.fusion_enabled:
        total += T_ * J * len(config.enabled_encoders) * D * D
    total += T_ * J * D * 3
    return total


# -- forward pass -------------------------------------------------------------

def te_block(tokens: Tensor, params: dict[str, Tensor], prefix: str,
             heads: int) -> Tensor:
    """Pre-norm multi-head self-attention block with residuals.

    `tokens` has shape (M, n, w): M independent sequences of n tokens.
    """
    m, n, w = tokens.shape
    if w % heads != 0:
        raise ConfigError(f"token width {w} not divisible by {heads} heads")
    hd = w // heads

    h = T.layer_norm(tokens, params[f"{prefix}.ln1.gamma"], params[f"{prefix}.ln1.beta"])
    qkv = []
    for p in ("q", "k", "v"):
        y = T.add(T.matmul(h, params[f"{prefix}.attn.w{p}"]), params[f"{prefix}.attn.b{p}"])
        y = T.transpose(T.reshape(y, (m, n, heads, hd)), (0, 2, 1, 3))
        qkv.append(y)
    q, k, v = qkv
    scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(hd))
    attn = T.matmul(T.softmax(scores), v)
    attn = T.reshape(T.transpose(attn, (0, 2, 1, 3)), (m, n, w))
    attn = T.add(T.matmul(attn, params[f"{prefix}.attn.wo"]), params[f"{prefix}.attn.bo"])
    x = T.add(tokens, attn)

    h = T.layer_norm(x, params[f"{prefix}.ln2.gamma"], params[f"{prefix}.ln2.beta"])
    h = T.gelu(T.add(T.matmul(h, params[f"{prefix}.mlp.w1"]), params[f"{prefix}.mlp.b1"]))
    h = T.add(T.matmul(h, params[f"{prefix}.mlp.w2"]), params[f"{prefix}.mlp.b2"])
    return T.add(x, h)


def _run_stack(tokens: Tensor, params: dict[str, Tensor], prefix: str,
               layers: int, heads: int) -> Tensor:
    for layer in range(layers):
        tokens = te_block(tokens, params, f"{prefix}.layer{layer}", heads)
    return tokens


def embed(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Per-joint 2 -> D linear map followed by layer norm."""
    if x.shape[-1] != 2:
        raise ConfigError(f"expected 2 input channels, got {x.shape[-1]}")
    return T.layer_norm(T.matmul(x, params["embed.w"]),
                        params["embed.ln.gamma"], params["embed.ln.beta"])


def ste_forward(x: Tensor, params: dict[str, Tensor], config: EncoderConfig) -> Tensor:
    """Spatial encoder: attention over the joints of each frame independently."""
    b, t, j, d = x.shape
    tokens = T.add(T.reshape(x, (b * t, j, d)), params["ste.pos"])
    tokens = _run_stack(tokens, params, "ste", config.layers, config.heads_for(d))
    return T.reshape(tokens, (b, t, j, d))


def jtte_forward(x: Tensor, params: dict[str, Tensor], config: EncoderConfig) -> Tensor:
    """Joint-temporal encoder: attention over each joint's trajectory."""
    b, t, j, d = x.shape
    tokens = T.reshape(T.transpose(x, (0, 2, 1, 3)), (b * j, t, d))
    tokens = T.add(tokens, params["jtte.pos"])
    tokens = _run_stack(tokens, params, "jtte", config.layers, config.heads_for(d))
    return T.transpose(T.reshape(tokens, (b, j, t, d)), (0, 2, 1, 3))


def btte_forward(x: Tensor, params: dict[str, Tensor], config: EncoderConfig,
                 partition: BodyPartPartition) -> Tensor:
    """Body-part temporal encoder: per part, frames become concatenated-joint
    tokens, each part runs its own encoder, joints reassemble in original order."""
    b, t, j, d = x.shape
    if sum(partition.sizes) != j:
        raise ConfigError(f"partition covers {sum(partition.sizes)} joints, input has {j}")
    part_outputs = []
    order: list[int] = []
    for k, group in enumerate(partition.groups):
        size = len(group)
        w = size * d
        sub = T.index_select(x, 2, group)                    # (b, t, size, d)
        tokens = T.add(T.reshape(sub, (b, t, w)), params[f"btte.part{k}.pos"])
        tokens = _run_stack(tokens, params, f"btte.part{k}",
                            config.layers, config.heads_for(w))
        part_outputs.append(T.reshape(tokens, (b, t, size, d)))
        order.extend(group)
    stacked = T.concat(part_outputs, axis=2)                 # partition joint order
    inverse = np.argsort(order)
    return T.index_select(stacked, 2, inverse)


def ptte_forward(x: Tensor, params: dict[str, Tensor], config: EncoderConfig) -> Tensor:
    """Pose-temporal encoder: whole frames become tokens."""
    b, t, j, d = x.shape
    w = j * d
    tokens = T.add(T.reshape(x, (b, t, w)), params["ptte.pos"])
    tokens = _run_stack(tokens, params, "ptte", config.layers, config.heads_for(w))
    return T.reshape(tokens, (b, t, j, d))


def fuse(outputs: list[Tensor], w_f: Tensor) -> Tensor:
    """Feature-axis concatenation of encoder outputs, then linear back to D."""
    ref = outputs[0].shape
    for o in outputs[1:]:
        if o.shape != ref:
            raise ConfigError(f"fusion inputs disagree: {o.shape} vs {ref}")
    return T.matmul(T.concat(outputs, axis=-1), w_f)


_STAGE_FN = {
    "STE": lambda x, p, c, part: ste_forward(x, p, c),
    "JTTE": lambda x, p, c, part: jtte_forward(x, p, c),
    "BTTE": btte_forward,
    "PTTE": lambda x, p, c, part: ptte_forward(x, p, c),
}


def forward(x: Tensor, params: dict[str, Tensor], config: EncoderConfig,
            partition: BodyPartPartition) -> Tensor:
    """Full network: (B, T, J, 2) or (T, J, 2) input to matching (..., J, 3) output."""
    squeeze = x.data.ndim == 3
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    if x.shape[1] != config.frames or x.shape[2] != config.joints:
        raise ConfigError(
            f"input shape {x.shape[1:]} does not match config "
            f"T={config.frames}, J={config.joints}")
    h = embed(x, params)
    stage_outputs: dict[str, Tensor] = {}
    for enc in config.encoder_order:
        h = _STAGE_FN[enc](h, params, config, partition)
        stage_outputs[enc] = h
    if config.fusion_enabled:
        h = fuse([stage_outputs[e] for e in config.enabled_canonical()],
                 params["fusion.w"])
    y = T.add(T.matmul(h, params["head.w"]), params["head.b"])
    if squeeze:
        y = T.reshape(y, y.shape[1:])
    return y


# -- checkpoint serialization -------------------------------------------------

def save_checkpoint(path, config: EncoderConfig, params: dict[str, Tensor],
                    skeleton_names: tuple[str, ...] | None = None) -> None:
    if skeleton_names is None:
        skeleton_names = default_skeleton()[0].joint_names
    header = json.dumps({"config": config.to_dict(),
                         "skeleton": list(skeleton_names)},
                        sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    _, partition = default_skeleton()
    for name, shape in param_layout(config, partition):
        t = params[name]
        if t.shape != shape:
            raise CheckpointError(f"parameter {name} has shape {t.shape}, layout says {shape}")
        buf.write(struct.pack("<I", len(shape)))
        buf.write(struct.pack(f"<{len(shape)}I", *shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def load_checkpoint(path) -> tuple[EncoderConfig, dict[str, Tensor]]:
    with open(path, "rb") as f:
        raw = f.read()
    view = io.BytesIO(raw)
    if view.read(4) != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    (version,) = struct.unpack("<I", view.read(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    (hlen,) = struct.unpack("<I", view.read(4))
    header = json.loads(view.read(hlen).decode())
    config = EncoderConfig.from_dict(header["config"])
    skel, partition = default_skeleton()
    if tuple(header["skeleton"]) != skel.joint_names:
        raise CheckpointError(f"{path}: skeleton does not match the canonical joint list")
    params: dict[str, Tensor] = {}
    for name, shape in param_layout(config, partition):
        (rank,) = struct.unpack("<I", view.read(4))
        extents = struct.unpack(f"<{rank}I", view.read(4 * rank))
        if extents != shape:
            raise CheckpointError(
                f"{path}: parameter {name} has extents {extents}, expected {shape}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(view.read(8 * count), dtype="<f8").reshape(shape)
        params[name] = Tensor(data.copy(), requires_grad=True)
    if view.read(1):
        raise CheckpointError(f"{path}: trailing bytes after last parameter")
    return config, params
