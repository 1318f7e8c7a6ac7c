"""Training objectives over tape tensors, plus their analytic gradients.

Plasticity side: dot-regression pulls each unit feature's cosine with its
(possibly mixed) prototype toward 1; the focal contrastive loss optimizes
sample-sample and sample-prototype ratios with a focal modulation.
Stability side: instance-relation and sample-prototype-relation
distillation, blended on an epoch schedule.

Everything that trains goes through the tape; the analytic-gradient
helpers are plain numpy and exist as oracles for the tape path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor
from .geometry import PrototypeSet

_LOG_ONE_MINUS = math.log(1.0 - 1e-12)


@dataclass
class FNC2Config:
    tau: float = 0.5
    gamma: float = 0.0

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"FNC2Config: tau must be > 0, got {self.tau}")
        if self.gamma < 0:
            raise ValueError(f"FNC2Config: gamma must be >= 0, got {self.gamma}")


@dataclass
class DistillConfig:
    kappa_past: float = 0.01
    kappa_current: float = 0.2
    zeta_past: float = 0.1
    zeta_current: float = 0.2
    warmup_epochs: int = 10   # e0
    total_epochs: int = 100   # E

    def __post_init__(self):
        for name in ("kappa_past", "kappa_current", "zeta_past", "zeta_current"):
            if getattr(self, name) <= 0:
                raise ValueError(f"DistillConfig: {name} must be > 0")
        if not 0 <= self.warmup_epochs <= self.total_epochs:
            raise ValueError("DistillConfig: need 0 <= warmup_epochs <= "
                             "total_epochs")


@dataclass
class PlasticityConfig:
    mode: str = "dr"        # "dr" | "fnc2"
    upsilon: float = 5.0    # weight of the mixed-sample term in dr mode
    iota: float = 5.0       # weight of the mixed-sample term in fnc2 mode

    def __post_init__(self):
        if self.mode not in ("dr", "fnc2"):
            raise ValueError(f"PlasticityConfig: unknown mode {self.mode!r}")
        if self.upsilon < 0 or self.iota < 0:
            raise ValueError("PlasticityConfig: weights must be >= 0")


class ClampCounter:
    """Counts log-ratio arguments that had to be clamped below 1."""

    def __init__(self):
        self.events = 0

    def add(self, n: int):
        self.events += int(n)


def _check_unit_rows(name: str, z: np.ndarray, tol: float = 1e-6):
    norms = np.linalg.norm(z, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError(f"{name}: features must be unit-norm "
                         f"(worst |norm-1| = {np.abs(norms - 1).max():.2e})")


def _proto_array(prototypes) -> np.ndarray:
    if isinstance(prototypes, PrototypeSet):
        return prototypes.vectors
    return np.asarray(prototypes, dtype=np.float64)


def _broadcast_col(tape: Tape, v: Tensor, m: int) -> Tensor:
    """(n,) -> (n, m) by repeating each entry across a row."""
    n = v.values.shape[0]
    col = tape.reshape(v, (n, 1))
    return tape.matmul(col, tape.constant(np.ones((1, m))))


def dr_loss(tape: Tape, z: Tensor, targets: np.ndarray) -> Tensor:
    """Mean over the batch of half the squared cosine gap to the target.

    Targets may be off-sphere in the linear-interpolation ablation arm, so
    only the features are required to be unit-norm.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if z.values.shape != targets.shape:
        raise ValueError(f"dr_loss: {z.values.shape[0]} features vs "
                         f"{targets.shape[0]} targets")
    _check_unit_rows("dr_loss", z.values)
    n = z.values.shape[0]
    cosines = tape.sum(tape.mul(z, tape.constant(targets)), axis=1)
    sq = tape.pow_const(tape.add_const(cosines, -1.0), 2.0)
    return tape.scale(tape.sum(sq), 0.5 / n)


def dr_grad_analytic(z: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Per-sample gradient -(1 - <z,p>) p of the unaveraged term."""
    z = np.asarray(z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    return -(1.0 - z @ p) * p


def _masked_softmax_rows(sim: np.ndarray, temp: float,
                         exclude_diag: bool) -> np.ndarray:
    e = np.exp(sim / temp)
    if exclude_diag:
        np.fill_diagonal(e, 0.0)
    return e / e.sum(axis=1, keepdims=True)


def fnc2_loss(tape: Tape, z: Tensor, labels: np.ndarray, prototypes,
              past_prototypes: np.ndarray | None, cfg: FNC2Config,
              clamp_counter: ClampCounter | None = None) -> Tensor:
    """Focal contrastive loss over sample-sample and sample-prototype ratios.

    Ratios are taken literally: the normalizer excludes the positive-pair
    and own-prototype numerators, so a ratio can exceed 1; log arguments
    are clamped to (0, 1 - 1e-12] and clamps are counted.
    """
    protos = _proto_array(prototypes)
    labels = np.asarray(labels)
    n = z.values.shape[0]
    if labels.shape[0] != n:
        raise ValueError(f"fnc2_loss: {n} features vs {labels.shape[0]} labels")
    _check_unit_rows("fnc2_loss", z.values)
    tau = cfg.tau

    sim = tape.matmul(z, tape.transpose(z))                     # (n, n)
    offdiag = 1.0 - np.eye(n)
    exp_off = tape.mul(tape.exp(tape.scale(sim, 1.0 / tau)),
                       tape.constant(offdiag))
    denom = tape.sum(exp_off, axis=1)                           # (n,)
    if past_prototypes is not None and len(past_prototypes) > 0:
        past = np.asarray(past_prototypes, dtype=np.float64)
        sim_past = tape.matmul(z, tape.constant(past.T))
        denom = tape.add(denom,
                         tape.sum(tape.exp(tape.scale(sim_past, 1.0 / tau)),
                                  axis=1))
    log_denom = tape.log(denom)
    log_denom_mat = _broadcast_col(tape, log_denom, n)

    log_c = tape.sub(tape.scale(sim, 1.0 / tau), log_denom_mat)
    log_c_cl = tape.clip_max(log_c, _LOG_ONE_MINUS)
    c = tape.exp(log_c_cl)

    own = tape.sum(tape.mul(z, tape.constant(protos[labels])), axis=1)
    log_r = tape.sub(tape.scale(own, 1.0 / tau), log_denom)
    log_r_cl = tape.clip_max(log_r, _LOG_ONE_MINUS)
    r = tape.exp(log_r_cl)

    pos_mask = ((labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool))
    anchor_w = 1.0 / (pos_mask.sum(axis=1) + 1.0)
    pair_w = pos_mask * anchor_w[:, None]

    if clamp_counter is not None:
        clamp_counter.add((log_c.values > _LOG_ONE_MINUS)[pos_mask].sum()
                          + (log_r.values > _LOG_ONE_MINUS).sum())

    ones_nn = tape.constant(np.ones((n, n)))
    focal_pairs = tape.pow_const(tape.sub(ones_nn, c), cfg.gamma)
    pair_term = tape.sum(tape.mul(tape.mul(focal_pairs, log_c_cl),
                                  tape.constant(pair_w)))
    ones_n = tape.constant(np.ones(n))
    focal_r = tape.pow_const(tape.sub(ones_n, r), cfg.gamma)
    r_term = tape.sum(tape.mul(tape.mul(focal_r, log_r_cl),
                               tape.constant(anchor_w)))
    return tape.scale(tape.add(pair_term, r_term), -1.0)


def fnc2_grad_decomposition(z_tilde: np.ndarray, p_tilde: np.ndarray,
                            others: np.ndarray,
                            past_prototypes: np.ndarray | None,
                            tau: float) -> tuple[np.ndarray, np.ndarray]:
    """Pull/push split of d(-log r~)/dz~ for a positive-free anchor.

    Valid for gamma = 0 (the focal factor is dropped). The parts sum to the
    full gradient of the single-sample loss.
    """
    z_tilde = np.asarray(z_tilde, dtype=np.float64)
    p_tilde = np.asarray(p_tilde, dtype=np.float64)
    others = np.asarray(others, dtype=np.float64)
    weights = np.exp(others @ z_tilde / tau)
    denom = weights.sum()
    push = (others / tau * weights[:, None]).sum(axis=0)
    if past_prototypes is not None and len(past_prototypes) > 0:
        past = np.asarray(past_prototypes, dtype=np.float64)
        w_past = np.exp(past @ z_tilde / tau)
        denom += w_past.sum()
        push = push + (past / tau * w_past[:, None]).sum(axis=0)
    g_pull = -p_tilde / tau
    g_push = push / denom
    return g_pull, g_push


def supcon_loss(tape: Tape, z: Tensor, labels: np.ndarray,
                tau: float) -> Tensor:
    """Supervised contrastive loss; positive-free anchors contribute exactly 0."""
    labels = np.asarray(labels)
    n = z.values.shape[0]
    _check_unit_rows("supcon_loss", z.values)

    sim = tape.matmul(z, tape.transpose(z))
    offdiag = 1.0 - np.eye(n)
    exp_off = tape.mul(tape.exp(tape.scale(sim, 1.0 / tau)),
                       tape.constant(offdiag))
    log_denom_mat = _broadcast_col(tape, tape.log(tape.sum(exp_off, axis=1)), n)
    log_prob = tape.sub(tape.scale(sim, 1.0 / tau), log_denom_mat)

    pos_mask = ((labels[:, None] == labels[None, :]) & ~np.eye(n, dtype=bool))
    counts = pos_mask.sum(axis=1)
    anchor_w = np.divide(1.0, counts, out=np.zeros(n, dtype=np.float64),
                         where=counts > 0)
    pair_w = pos_mask * anchor_w[:, None]
    return tape.scale(tape.sum(tape.mul(log_prob, tape.constant(pair_w))), -1.0)


def ird_loss(tape: Tape, z_current: Tensor, z_past: np.ndarray,
             kappa_current: float, kappa_past: float) -> Tensor:
    """Cross-entropy between past and current instance-similarity softmaxes.

    Each sample's similarity vector runs over the other 2N-1 samples; the
    past side is a constant teacher.
    """
    z_past = np.asarray(z_past, dtype=np.float64)
    n = z_current.values.shape[0]
    if n < 2:
        raise ValueError(f"ird_loss: need at least 2 samples, got {n}")
    if z_past.shape[0] != n:
        raise ValueError(f"ird_loss: {n} current vs {z_past.shape[0]} past")

    teacher = _masked_softmax_rows(z_past @ z_past.T, kappa_past,
                                   exclude_diag=True)
    sim = tape.matmul(z_current, tape.transpose(z_current))
    offdiag = 1.0 - np.eye(n)
    exp_off = tape.mul(tape.exp(tape.scale(sim, 1.0 / kappa_current)),
                       tape.constant(offdiag))
    log_denom_mat = _broadcast_col(tape, tape.log(tape.sum(exp_off, axis=1)), n)
    log_student = tape.sub(tape.scale(sim, 1.0 / kappa_current), log_denom_mat)
    return tape.scale(tape.sum(tape.mul(log_student, tape.constant(teacher))),
                      -1.0)


def sprd_loss(tape: Tape, z_current: Tensor, z_past: np.ndarray,
              prototypes_so_far, zeta_current: float,
              zeta_past: float) -> Tensor:
    """Cross-entropy between past and current sample-prototype softmaxes."""
    protos = _proto_array(prototypes_so_far)
    if protos.size == 0:
        raise ValueError("sprd_loss: empty prototype set")
    z_past = np.asarray(z_past, dtype=np.float64)
    n = z_current.values.shape[0]
    if z_past.shape[0] != n:
        raise ValueError(f"sprd_loss: {n} current vs {z_past.shape[0]} past")
    n_protos = protos.shape[0]

    teacher = _masked_softmax_rows(z_past @ protos.T, zeta_past,
                                   exclude_diag=False)
    sim = tape.matmul(z_current, tape.constant(protos.T))
    denom = tape.sum(tape.exp(tape.scale(sim, 1.0 / zeta_current)), axis=1)
    log_denom_mat = _broadcast_col(tape, tape.log(denom), n_protos)
    log_student = tape.sub(tape.scale(sim, 1.0 / zeta_current), log_denom_mat)
    return tape.scale(tape.sum(tape.mul(log_student, tape.constant(teacher))),
                      -1.0)


def distill_blend_weight(epoch: int, cfg: DistillConfig) -> float:
    if epoch < 0:
        raise ValueError(f"distill_blend_weight: epoch must be >= 0, got {epoch}")
    return max(0.0, (epoch - cfg.warmup_epochs) / cfg.total_epochs)


def hsd_loss(tape: Tape, ird: Tensor, sprd: Tensor | None, epoch: int,
             cfg: DistillConfig) -> Tensor:
    """Epoch-scheduled blend of the two distillation losses.

    During warm-up the blend weight is 0 and the instance-relation value is
    returned unchanged (bitwise).
    """
    xi = distill_blend_weight(epoch, cfg)
    if xi == 0.0:
        return ird
    if sprd is None:
        raise ValueError("hsd_loss: sprd term required once past warm-up")
    return tape.add(tape.scale(ird, 1.0 - xi), tape.scale(sprd, xi))


def plasticity_loss(tape: Tape, normal_z: Tensor, mixed_z: Tensor | None,
                    labels: np.ndarray,
                    mixed_prototypes: np.ndarray | None,
                    prototypes, cfg: PlasticityConfig,
                    fnc2_cfg: FNC2Config,
                    past_prototypes: np.ndarray | None = None,
                    clamp_counter: ClampCounter | None = None) -> Tensor:
    """Normal-sample objective plus a weighted dot-regression term on mixes.

    Mixed samples never enter the contrastive path; with mixing disabled or
    a zero weight the normal-sample term is returned unchanged.
    """
    protos = _proto_array(prototypes)
    labels = np.asarray(labels)
    if cfg.mode == "dr":
        base = dr_loss(tape, normal_z, protos[labels])
        weight = cfg.upsilon
    else:
        base = fnc2_loss(tape, normal_z, labels, protos, past_prototypes,
                         fnc2_cfg, clamp_counter)
        weight = cfg.iota
    if mixed_z is None or weight == 0.0:
        return base
    if mixed_prototypes is None:
        raise ValueError("plasticity_loss: mixed features given without "
                         "mixed prototypes")
    return tape.add(base, tape.scale(dr_loss(tape, mixed_z, mixed_prototypes),
                                     weight))
