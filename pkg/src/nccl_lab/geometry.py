"""Fixed unit-sphere prototype geometry: ETF construction and interpolation.

Prototypes are K maximally separated unit vectors (pairwise cosine
-1/(K-1)), frozen for the lifetime of a run. Mixing interpolates pairs of
prototypes either along the great-circle arc (slerp, stays on the sphere)
or linearly (leaves the sphere; kept for the ablation arm).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

_SAME_DIRECTION_EPS = 1e-7
_ANTIPODAL_EPS = 1e-7


@dataclass(frozen=True)
class PrototypeSet:
    """K fixed unit-norm prototypes in R^d, row index = global class id."""

    vectors: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "vectors", v)

    @property
    def K(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def __getitem__(self, class_id: int) -> np.ndarray:
        return self.vectors[class_id]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["class_id"] + [f"c{i}" for i in range(self.d)])
            for k in range(self.K):
                writer.writerow([k] + [repr(float(x)) for x in self.vectors[k]])

    @classmethod
    def from_csv(cls, path) -> "PrototypeSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        vectors = np.array([[float(x) for x in row[1:]] for row in rows[1:]])
        return cls(vectors)


def build_etf(k: int, d: int, seed: int = 0) -> PrototypeSet:
    """Construct K equiangular unit prototypes in R^d.

    The orthonormal basis is obtained by QR-orthonormalizing a seeded
    Gaussian d-by-k draw. Requires k <= d so the basis exists.
    """
    if k < 2:
        raise ValueError(f"build_etf: need at least 2 classes, got {k}")
    if k > d:
        raise ValueError(f"build_etf: k={k} exceeds dimension d={d}")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((d, k))
    u, _ = np.linalg.qr(gauss)
    center = np.eye(k) - np.ones((k, k)) / k
    q = math.sqrt(k / (k - 1)) * (u @ center)
    return PrototypeSet(q.T)


def slerp(p_a: np.ndarray, p_b: np.ndarray, lam: float) -> np.ndarray:
    """Great-circle interpolation of two unit vectors.

    Weighting follows the mixed-sample convention: lam=1 returns ``p_a``.
    Coincident endpoints short-circuit to ``p_a`` (same-class pair);
    antipodal endpoints have no unique geodesic and raise.
    """
    p_a = np.asarray(p_a, dtype=np.float64)
    p_b = np.asarray(p_b, dtype=np.float64)
    for name, p in (("p_a", p_a), ("p_b", p_b)):
        norm = np.linalg.norm(p)
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"slerp: {name} is not unit-norm (|{name}|={norm})")
    cos_omega = float(np.clip(p_a @ p_b, -1.0, 1.0))
    omega = math.acos(cos_omega)
    if omega < _SAME_DIRECTION_EPS:
        return p_a.copy()
    if math.pi - omega < _ANTIPODAL_EPS:
        raise ValueError("slerp: antipodal prototypes have no unique geodesic")
    sin_omega = math.sin(omega)
    gamma_a = math.sin(lam * omega) / sin_omega
    gamma_b = math.sin((1.0 - lam) * omega) / sin_omega
    return gamma_a * p_a + gamma_b * p_b


def lerp(p_a: np.ndarray, p_b: np.ndarray, lam: float) -> np.ndarray:
    """Linear interpolation; NOT renormalized (ablation arm and norm tests)."""
    p_a = np.asarray(p_a, dtype=np.float64)
    p_b = np.asarray(p_b, dtype=np.float64)
    return lam * p_a + (1.0 - lam) * p_b


def lerp_norm_sq(lam: float, cos_omega: float) -> float:
    """Squared norm of the linear mix of two unit vectors at angle Omega."""
    return lam**2 + (1.0 - lam) ** 2 + 2.0 * lam * (1.0 - lam) * cos_omega


def pairwise_cosine_matrix(prototypes) -> np.ndarray:
    """K x K matrix of inner products between prototypes."""
    v = prototypes.vectors if isinstance(prototypes, PrototypeSet) \
        else np.asarray(prototypes, dtype=np.float64)
    return v @ v.T
