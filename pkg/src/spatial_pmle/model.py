"""Discretized Poisson log-likelihood for region counts.

The linear predictor for region ``i`` is ``alpha_i + X_i @ beta`` and the
expected count is ``area_i * offset_i * exp(alpha_i + X_i @ beta)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

#: Bounds applied to the linear predictor before exponentiation.
ETA_CLAMP = 30.0


class DataError(ValueError):
    """Raised when a dataset or parameter vector is malformed."""


@dataclass(frozen=True)
class Dataset:
    """Observed counts, offsets, areas and covariates for ``n`` regions."""

    y: np.ndarray
    p_offset: np.ndarray
    area: np.ndarray
    X: np.ndarray
    region_ids: tuple = field(default=())
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float).ravel()
        n = y.size
        P = np.broadcast_to(np.asarray(self.p_offset, dtype=float), (n,)).copy()
        A = np.broadcast_to(np.asarray(self.area, dtype=float), (n,)).copy()
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, 0)
        if X.shape[0] != n:
            raise DataError(f"X has {X.shape[0]} rows but there are {n} counts")
        for name, arr in (("y", y), ("p_offset", P), ("area", A), ("X", X)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"{name} has non-finite entries")
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise DataError("counts must be nonnegative integers")
        if np.any(P <= 0):
            raise DataError("offsets must be strictly positive")
        if np.any(A <= 0):
            raise DataError("areas must be strictly positive")
        ids = tuple(self.region_ids) if len(self.region_ids) else tuple(range(n))
        if len(ids) != n:
            raise DataError("region_ids length must equal n")
        names = tuple(self.covariate_names) if len(self.covariate_names) else tuple(
            f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("covariate_names length must equal p")
        for arr in (y, P, A, X):
            arr.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "p_offset", P)
        object.__setattr__(self, "area", A)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "region_ids", ids)
        object.__setattr__(self, "covariate_names", names)
        exposure = A * P
        exposure.setflags(write=False)
        log_offset = np.log(P)
        log_offset.setflags(write=False)
        object.__setattr__(self, "exposure", exposure)
        object.__setattr__(self, "log_offset", log_offset)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.y[idx], self.p_offset[idx], self.area[idx], self.X[idx],
                       tuple(self.region_ids[i] for i in idx), self.covariate_names)


@dataclass(frozen=True)
class ParamVector:
    """Baselines ``alpha`` (one per region) and covariate effects ``beta``."""

    alpha: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        alpha = np.clip(np.asarray(self.alpha, dtype=float).ravel(), -ETA_CLAMP, ETA_CLAMP)
        beta = np.asarray(self.beta, dtype=float).ravel()
        if not (np.all(np.isfinite(alpha)) and np.all(np.isfinite(beta))):
            raise DataError("parameters must be finite")
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def zeros(cls, n: int, p: int) -> "ParamVector":
        return cls(np.zeros(n), np.zeros(p))

    @classmethod
    def from_flat(cls, theta: np.ndarray, n: int) -> "ParamVector":
        theta = np.asarray(theta, dtype=float)
        return cls(theta[:n], theta[n:])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.alpha, self.beta])


def _check(d: Dataset, theta: ParamVector):
    if theta.alpha.size != d.n or theta.beta.size != d.p:
        raise DataError(
            f"parameter shapes ({theta.alpha.size}, {theta.beta.size}) do not match "
            f"dataset ({d.n}, {d.p})")


def linear_predictor(d: Dataset, alpha, beta) -> np.ndarray:
    return alpha + d.X @ beta if d.p else np.array(alpha, dtype=float)


def _mean(d: Dataset, eta: np.ndarray) -> np.ndarray:
    return d.exposure * np.exp(np.clip(eta, -ETA_CLAMP, ETA_CLAMP))


def predicted_mean(d: Dataset, theta: ParamVector) -> np.ndarray:
    """Expected counts ``mu_i = |Omega_i| P_i exp(alpha_i + X_i beta)``."""
    _check(d, theta)
    mu = _mean(d, linear_predictor(d, theta.alpha, theta.beta))
    if not np.all(np.isfinite(mu)):
        raise DataError("fitted means overflow; check offsets and areas")
    return mu


def loglik(d: Dataset, theta: ParamVector) -> float:
    """Poisson log-likelihood without the ``-log(y!)`` constant."""
    _check(d, theta)
    return _loglik_raw(d, theta.alpha, theta.beta)


def _loglik_raw(d: Dataset, alpha, beta) -> float:
    eta = linear_predictor(d, alpha, beta)
    return float(d.y @ (d.log_offset + eta) - _mean(d, eta).sum())


def grad_loglik(d: Dataset, theta: ParamVector) -> tuple[np.ndarray, np.ndarray]:
    """Gradient blocks ``(y - mu, X^T (y - mu))``."""
    _check(d, theta)
    return _grad_raw(d, theta.alpha, theta.beta)


def _grad_raw(d: Dataset, alpha, beta):
    r = d.y - _mean(d, linear_predictor(d, alpha, beta))
    return r, d.X.T @ r


def hessian_beta(d: Dataset, theta: ParamVector) -> np.ndarray:
    """Unnormalized negative Hessian in beta: ``X^T diag(mu) X``."""
    mu = predicted_mean(d, theta)
    H = (d.X * mu[:, None]).T @ d.X
    return 0.5 * (H + H.T)


def hessian_cross(d: Dataset, theta: ParamVector) -> np.ndarray:
    """Mixed second derivative of the log-likelihood, ``-X^T diag(mu)`` (p x n)."""
    mu = predicted_mean(d, theta)
    return -(d.X * mu[:, None]).T


def standardize(d: Dataset):
    """Center and scale each covariate column.

    Constant columns are centered but left unscaled.  Returns
    ``(standardized dataset, center, scale)``.
    """
    center = d.X.mean(axis=0) if d.n else np.zeros(d.p)
    scale = d.X.std(axis=0) if d.n else np.ones(d.p)
    scale = np.where(scale > 0, scale, 1.0)
    Xs = (d.X - center) / scale
    return (Dataset(d.y, d.p_offset, d.area, Xs, d.region_ids, d.covariate_names),
            center, scale)


def to_original_scale(theta: ParamVector, center, scale) -> ParamVector:
    """Map parameters fitted on standardized covariates back to the raw scale."""
    beta = theta.beta / scale
    return ParamVector(theta.alpha - float(beta @ center), beta)


def to_standard_scale(theta: ParamVector, center, scale) -> ParamVector:
    """Inverse of ``to_original_scale``."""
    return ParamVector(theta.alpha + float(theta.beta @ center), theta.beta * scale)
