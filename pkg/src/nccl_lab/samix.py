"""Per-batch mixing of inputs and their prototypes on the unit sphere.

One mixing coefficient is drawn per batch from Beta(alpha, alpha); partners
come from a seeded permutation so every view is mixed exactly once. Inputs
mix linearly while prototypes mix on the sphere (or linearly, for the
ablation arm). Mixed prototypes are derived values and are never written
back into the prototype set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PrototypeSet, lerp, slerp


@dataclass
class MixConfig:
    alpha: float = 25.0
    enabled: bool = True
    interp_mode: str = "slerp"  # "slerp" | "linear"
    current_only: bool = False  # restrict pairing to current-task views

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"MixConfig: alpha must be > 0, got {self.alpha}")
        if self.interp_mode not in ("slerp", "linear"):
            raise ValueError(f"MixConfig: unknown interp_mode "
                             f"{self.interp_mode!r}")


@dataclass
class MixedBatch:
    mixed_inputs: np.ndarray      # (2N, input_dim)
    mixed_prototypes: np.ndarray  # (2N, d)
    lam: float
    pair_index: np.ndarray        # partner view index for each view


def sample_lambda(alpha: float, rng: np.random.Generator) -> float:
    """One Beta(alpha, alpha) draw via the ratio of two Gamma(alpha, 1) draws."""
    if alpha <= 0:
        raise ValueError(f"sample_lambda: alpha must be > 0, got {alpha}")
    g1 = rng.gamma(alpha, 1.0)
    g2 = rng.gamma(alpha, 1.0)
    return float(g1 / (g1 + g2))


def mix_batch(views: np.ndarray, labels: np.ndarray,
              prototypes: PrototypeSet, cfg: MixConfig,
              rng: np.random.Generator,
              origins: np.ndarray | None = None) -> MixedBatch:
    """Mix every view in the batch with a randomly permuted partner.

    ``origins`` flags buffer-sourced views; with ``cfg.current_only`` those
    keep themselves as partner (identity mix).
    """
    if not cfg.enabled:
        raise ValueError("mix_batch: mixing is disabled in the config")
    views = np.asarray(views, dtype=np.float64)
    labels = np.asarray(labels)
    n = views.shape[0]
    if labels.shape[0] != n:
        raise ValueError(f"mix_batch: {n} views but {labels.shape[0]} labels")
    if labels.size and labels.max() >= prototypes.K:
        raise ValueError(f"mix_batch: label {labels.max()} has no prototype "
                         f"(K={prototypes.K})")

    lam = sample_lambda(cfg.alpha, rng)
    partner = np.arange(n)
    if cfg.current_only and origins is not None:
        current = np.flatnonzero(np.asarray(origins) == 0)
        partner[current] = current[rng.permutation(current.size)]
    else:
        partner = rng.permutation(n)

    mixed_inputs = lam * views + (1.0 - lam) * views[partner]
    interp = slerp if cfg.interp_mode == "slerp" else lerp
    mixed_prototypes = np.empty((n, prototypes.d))
    for i in range(n):
        yi, yj = int(labels[i]), int(labels[partner[i]])
        if yi == yj:
            mixed_prototypes[i] = prototypes[yi]
        else:
            mixed_prototypes[i] = interp(prototypes[yi], prototypes[yj], lam)
    return MixedBatch(mixed_inputs, mixed_prototypes, lam, partner)
