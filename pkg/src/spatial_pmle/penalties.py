"""Sparsity and fusion penalties.

The smoothed l1 fusion term is the Huber-type envelope

    h(alpha) = max_{|nu|_inf <= 1} nu^T (gamma B alpha) - (xi / 2) |nu|^2,

evaluated in closed form per edge.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .graph import DEFAULT_RIDGE

#: Target approximation gap for the default smoothing parameter ``xi = eps / |E|``.
DEFAULT_SMOOTHING_EPS = 1e-2


class FusionKind(str, enum.Enum):
    L1_SMOOTHED = "l1"
    L2 = "l2"


@dataclass(frozen=True)
class PenaltyConfig:
    """Tuning parameters for the penalized objective.

    ``xi=None`` resolves to ``DEFAULT_SMOOTHING_EPS / |E|`` at evaluation time.
    """

    gamma: float = 0.0
    tau: float = 0.0
    fusion_kind: FusionKind = FusionKind.L2
    xi: float | None = None
    delta: float = DEFAULT_RIDGE

    def __post_init__(self):
        object.__setattr__(self, "fusion_kind", FusionKind(self.fusion_kind))
        if not (self.gamma >= 0 and self.tau >= 0):
            raise ValueError("gamma and tau must be nonnegative")
        if self.xi is not None and not self.xi > 0:
            raise ValueError("xi must be positive")
        if not self.delta >= 0:
            raise ValueError("delta must be nonnegative")

    def resolved_xi(self, n_edges: int) -> float:
        if self.xi is not None:
            return float(self.xi)
        return DEFAULT_SMOOTHING_EPS / max(n_edges, 1)

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "tau": self.tau, "fusion": self.fusion_kind.value,
                "xi": self.xi, "delta": self.delta}


def soft_threshold(x, t):
    if np.any(np.asarray(t) < 0):
        raise ValueError("threshold must be nonnegative")
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def linf_project(z):
    """Clip each coordinate to ``[-1, 1]``."""
    return np.clip(z, -1.0, 1.0)


def _check_shape(alpha, B):
    if alpha.shape != (B.shape[1],):
        raise ValueError(f"alpha has shape {alpha.shape}, expected ({B.shape[1]},)")


def l2_fusion(alpha, B, cfg: PenaltyConfig):
    """Value ``0.5 a^T (B^T B + delta I) a`` and its gradient (unscaled by gamma)."""
    alpha = np.asarray(alpha, dtype=float)
    _check_shape(alpha, B)
    Ba = B @ alpha
    grad = B.T @ Ba + cfg.delta * alpha
    value = 0.5 * (Ba @ Ba + cfg.delta * (alpha @ alpha))
    return float(value), grad


def huber(z, xi):
    """Elementwise ``z^2 / (2 xi)`` for ``|z| <= xi``, else ``|z| - xi / 2``."""
    a = np.abs(z)
    return np.where(a <= xi, z * z / (2.0 * xi), a - 0.5 * xi)


def smoothed_l1_fusion(alpha, B, cfg: PenaltyConfig):
    """Smoothed ``gamma * |B alpha|_1`` and its gradient (gamma included)."""
    alpha = np.asarray(alpha, dtype=float)
    _check_shape(alpha, B)
    xi = cfg.resolved_xi(B.shape[0])
    z = cfg.gamma * (B @ alpha)
    value = float(huber(z, xi).sum())
    grad = cfg.gamma * (B.T @ linf_project(z / xi))
    return value, grad


def fusion_term(alpha, B, cfg: PenaltyConfig):
    """Fusion contribution to the objective, already multiplied by gamma."""
    if cfg.gamma == 0:
        return 0.0, np.zeros_like(np.asarray(alpha, dtype=float))
    if cfg.fusion_kind is FusionKind.L2:
        v, g = l2_fusion(alpha, B, cfg)
        return cfg.gamma * v, cfg.gamma * g
    return smoothed_l1_fusion(alpha, B, cfg)
