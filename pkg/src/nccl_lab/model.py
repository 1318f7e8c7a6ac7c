"""The trainable stack: encoder, projector, predictor, probe classifier.

Desk-scale fully-connected networks. The projector output is always
l2-normalized onto the unit sphere; the predictor (same shape as the
projector) is applied to current-model features on the distillation path
only. SGD with momentum 0.9 and weight decay 1e-4; linear warmup then
cosine decay, restarted each task.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    hidden_dim: int = 64
    feature_dim: int = 64
    proj_hidden_dim: int = 64
    embed_dim: int = 16     # d, the unit-sphere feature dimension
    num_classes: int = 10


# parameter name -> (shape builder); order is the canonical flat layout
def _param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    return {
        "enc_w1": (cfg.input_dim, cfg.hidden_dim),
        "enc_b1": (cfg.hidden_dim,),
        "enc_w2": (cfg.hidden_dim, cfg.hidden_dim),
        "enc_b2": (cfg.hidden_dim,),
        "enc_w3": (cfg.hidden_dim, cfg.feature_dim),
        "enc_b3": (cfg.feature_dim,),
        "proj_w1": (cfg.feature_dim, cfg.proj_hidden_dim),
        "proj_b1": (cfg.proj_hidden_dim,),
        "proj_w2": (cfg.proj_hidden_dim, cfg.embed_dim),
        "proj_b2": (cfg.embed_dim,),
        "pred_w1": (cfg.embed_dim, cfg.proj_hidden_dim),
        "pred_b1": (cfg.proj_hidden_dim,),
        "pred_w2": (cfg.proj_hidden_dim, cfg.embed_dim),
        "pred_b2": (cfg.embed_dim,),
        "cls_w": (cfg.feature_dim, cfg.num_classes),
        "cls_b": (cfg.num_classes,),
    }


@dataclass
class ModelParams:
    cfg: ModelConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> list[str]:
        return sorted(self.arrays)

    def param_count(self) -> int:
        return sum(a.size for a in self.arrays.values())


def init_model(cfg: ModelConfig, rng: np.random.Generator) -> ModelParams:
    arrays = {}
    for name, shape in _param_shapes(cfg).items():
        if name.endswith(("b1", "b2", "b3", "_b")) or "_b" in name:
            arrays[name] = np.zeros(shape)
        else:
            fan_in = shape[0]
            arrays[name] = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
    return ModelParams(cfg, arrays)


def register_params(tape: Tape, params: ModelParams) -> dict[str, Tensor]:
    """Put every parameter on the tape as a leaf; one call per step."""
    return {name: tape.leaf(params.arrays[name])
            for name in params.names()}


def _mlp(tape: Tape, x: Tensor, pt: dict[str, Tensor], prefix: str,
         layers: int) -> Tensor:
    h = x
    for i in range(1, layers + 1):
        h = tape.add_bias(tape.matmul(h, pt[f"{prefix}_w{i}"]),
                          pt[f"{prefix}_b{i}"])
        if i < layers:
            h = tape.relu(h)
    return h


def forward_encoder(tape: Tape, pt: dict[str, Tensor], x) -> Tensor:
    x = tape._lift(x)
    if x.values.ndim != 2:
        raise ValueError(f"forward_encoder: expected 2-D batch, got "
                         f"{x.values.shape}")
    h = tape.relu(_mlp(tape, x, pt, "enc", 2))
    return tape.add_bias(tape.matmul(h, pt["enc_w3"]), pt["enc_b3"])


def forward_features(tape: Tape, pt: dict[str, Tensor], x) -> Tensor:
    """Encoder then projector, l2-normalized onto the unit sphere."""
    feats = forward_encoder(tape, pt, x)
    return tape.l2_normalize(_mlp(tape, feats, pt, "proj", 2))


def forward_predictor(tape: Tape, pt: dict[str, Tensor], z: Tensor) -> Tensor:
    return tape.l2_normalize(_mlp(tape, z, pt, "pred", 2))


def encode_np(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Numpy twin of forward_encoder for gradient-free evaluation paths."""
    a = params.arrays
    h = np.asarray(x, dtype=np.float64)
    h = np.maximum(h @ a["enc_w1"] + a["enc_b1"], 0.0)
    h = np.maximum(h @ a["enc_w2"] + a["enc_b2"], 0.0)
    return h @ a["enc_w3"] + a["enc_b3"]


def features_np(params: ModelParams, x: np.ndarray) -> np.ndarray:
    a = params.arrays
    h = encode_np(params, x)
    h = np.maximum(h @ a["proj_w1"] + a["proj_b1"], 0.0)
    h = h @ a["proj_w2"] + a["proj_b2"]
    return h / np.linalg.norm(h, axis=1, keepdims=True)


def snapshot(params: ModelParams) -> ModelParams:
    """Deep frozen copy; gradients never flow into it."""
    arrays = {}
    for name, arr in params.arrays.items():
        frozen = arr.copy()
        frozen.setflags(write=False)
        arrays[name] = frozen
    return ModelParams(params.cfg, arrays)


@dataclass
class OptimizerState:
    momentum: float = 0.9
    weight_decay: float = 1e-4
    buffers: dict[str, np.ndarray] = field(default_factory=dict)


def sgd_step(params: ModelParams, grads: dict[str, np.ndarray],
             opt: OptimizerState, lr: float) -> None:
    """v <- m v + (g + wd w); w <- w - lr v. Updates in sorted name order."""
    for name in sorted(grads):
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"sgd_step: non-finite gradient for "
                                     f"{name!r}")
        w = params.arrays[name]
        buf = opt.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(w)
        buf = opt.momentum * buf + (g + opt.weight_decay * w)
        opt.buffers[name] = buf
        params.arrays[name] = w - lr * buf


@dataclass
class LrSchedule:
    base_lr: float = 0.05
    warmup_epochs: int = 5


def lr_at(schedule: LrSchedule, epoch: int, epoch_count: int) -> float:
    """Linear warmup to base_lr, then cosine decay to 0 over the task."""
    if not 0 <= epoch < epoch_count:
        raise ValueError(f"lr_at: epoch {epoch} outside [0, {epoch_count})")
    warmup = min(schedule.warmup_epochs, epoch_count)
    if epoch < warmup:
        return schedule.base_lr * (epoch + 1) / warmup
    span = max(epoch_count - warmup, 1)
    progress = (epoch - warmup) / span
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def save_checkpoint(params: ModelParams, path_prefix: str) -> None:
    """Flat f64 binary plus a JSON sidecar of names and shapes."""
    names = params.names()
    flat = np.concatenate([params.arrays[n].ravel() for n in names])
    flat.tofile(path_prefix + ".bin")
    meta = {
        "cfg": dataclasses.asdict(params.cfg),
        "params": [{"name": n, "shape": list(params.arrays[n].shape)}
                   for n in names],
    }
    with open(path_prefix + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_checkpoint(path_prefix: str) -> ModelParams:
    with open(path_prefix + ".json") as fh:
        meta = json.load(fh)
    cfg = ModelConfig(**meta["cfg"])
    flat = np.fromfile(path_prefix + ".bin", dtype=np.float64)
    expected = sum(int(np.prod(e["shape"])) for e in meta["params"])
    if flat.size != expected:
        raise ValueError(f"load_checkpoint: size mismatch between binary "
                         f"({flat.size}) and sidecar ({expected})")
    arrays = {}
    offset = 0
    for entry in meta["params"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape))
        arrays[entry["name"]] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return ModelParams(cfg, arrays)
