"""De-biased estimates, covariance estimators and normal-theory intervals for beta."""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .model import Dataset, ParamVector, predicted_mean
from .solver import FitResult

log = logging.getLogger(__name__)


class CovarianceKind(str, enum.Enum):
    SANDWICH = "sandwich"
    GAUSSIAN_ERROR = "gaussian"


class DebiasInfeasible(ArithmeticError):
    """Raised when some rows of M stay infeasible after growing eta to its cap."""

    def __init__(self, rows, eta):
        self.rows = list(rows)
        self.eta = eta
        super().__init__(f"debiasing program infeasible for coordinates {self.rows} "
                         f"at eta={eta:g}")


def default_eta(n: int, p: int) -> float:
    """``0.1 * sqrt(log p / n)``, floored at 1e-3 so that p = 1 stays well posed."""
    return max(0.1 * math.sqrt(math.log(max(p, 1)) / n), 1e-3)


@dataclass(frozen=True)
class DebiasConfig:
    eta: float | None = None
    covariance_kind: CovarianceKind = CovarianceKind.SANDWICH
    level: float = 0.95
    eta_growth: float = 2.0
    max_growth_steps: int = 10
    positive_part: bool = True
    force: bool = False
    method: str = "path"

    def __post_init__(self):
        object.__setattr__(self, "covariance_kind", CovarianceKind(self.covariance_kind))
        if self.eta is not None and not self.eta > 0:
            raise ValueError("eta must be positive")
        if not 0 < self.level < 1:
            raise ValueError("level must lie in (0, 1)")
        if not self.eta_growth > 1:
            raise ValueError("eta_growth must exceed 1")
        if self.method not in ("path", "coordinate"):
            raise ValueError("method must be 'path' or 'coordinate'")


@dataclass
class InferenceResult:
    beta_hat: np.ndarray
    b_hat: np.ndarray
    M: np.ndarray
    sigma_hat: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    z_scores: np.ndarray
    p_values: np.ndarray
    eta_used: float
    covariance_kind: CovarianceKind
    level: float
    n: int
    zeta_hat: float | None = None
    names: tuple = field(default=())

    @property
    def std_error(self) -> np.ndarray:
        return self.sigma_hat / math.sqrt(self.n)

    def to_dict(self) -> dict:
        names = self.names or tuple(f"x{j + 1}" for j in range(self.b_hat.size))
        coefs = []
        for j, name in enumerate(names):
            coefs.append({
                "name": name,
                "beta_hat": float(self.beta_hat[j]),
                "b_hat": float(self.b_hat[j]),
                "sigma_hat": float(self.sigma_hat[j]),
                "ci_lower": float(self.ci_lower[j]),
                "ci_upper": float(self.ci_upper[j]),
                "z": float(self.z_scores[j]),
                "p_value": float(self.p_values[j]),
            })
        return {
            "coefficients": coefs,
            "eta_used": self.eta_used,
            "covariance_kind": self.covariance_kind.value,
            "level": self.level,
            "zeta_hat": self.zeta_hat,
        }


def _weighted_gram(X, w) -> np.ndarray:
    G = (X * w[:, None]).T @ X
    return 0.5 * (G + G.T)


def empirical_hessian(d: Dataset, theta_hat: ParamVector) -> np.ndarray:
    """``(1/n) sum_i X_i^T X_i mu_i``."""
    mu = predicted_mean(d, theta_hat)
    return _weighted_gram(d.X, mu) / d.n


def sandwich_covariance(d: Dataset, theta_hat: ParamVector) -> np.ndarray:
    """Conservative residual covariance

    ``(2/n) sum_i X_i^T X_i [(y_i - mu_i)^2 + (mu_i - mean(mu))^2]``.
    """
    mu = predicted_mean(d, theta_hat)
    w = (d.y - mu) ** 2 + (mu - mu.mean()) ** 2
    return 2.0 * _weighted_gram(d.X, w) / d.n


def zeta_hat(d: Dataset, theta_hat: ParamVector, positive_part: bool = True) -> float:
    """Moment estimate of ``exp(sigma^2) - 1`` from Pearson-type residuals."""
    m = predicted_mean(d, theta_hat)
    terms = ((d.y - m) ** 2 - m) / m ** 2
    if positive_part:
        terms = np.maximum(terms, 0.0)
    return float(terms.mean())


def gaussian_error_covariance(d: Dataset, theta_hat: ParamVector, zeta: float) -> np.ndarray:
    """``(1/n) sum_i X_i^T X_i (m_i + zeta m_i^2)`` for independent Gaussian errors."""
    if zeta < 0:
        raise ValueError("zeta must be nonnegative")
    m = predicted_mean(d, theta_hat)
    return _weighted_gram(d.X, m + zeta * m * m) / d.n


def _kkt_violation(K, j, eta, v):
    g = 0.5 * (K @ v)
    g[j] += 1.0
    return np.where(v != 0, np.abs(g + eta * np.sign(v)), np.maximum(np.abs(g) - eta, 0.0))


def _polish(K, j, eta, v):
    """Solve the stationarity equations exactly on the support and signs of ``v``."""
    act = np.flatnonzero(v)
    if act.size == 0:
        return v
    s = np.sign(v[act])
    rhs = -(np.eye(K.shape[0])[j, act] + eta * s)
    try:
        va = linalg.solve(0.5 * K[np.ix_(act, act)], rhs, assume_a="sym")
    except linalg.LinAlgError:
        return v
    if np.any(np.sign(va) != s):
        return v
    out = np.zeros_like(v)
    out[act] = va
    return out


def _solve_row(K, j, eta, tol=1e-12, max_sweeps=20000):
    """Coordinate descent on ``1/4 v^T K v + v_j + eta |v|_1``.

    This is the negated Lagrange dual of ``min m S m^T s.t. |H m - e_j|_inf <= eta``
    with ``K = H S^{-1} H``.  Every few sweeps the current support is polished
    by an exact solve.  Returns the dual vector and whether it converged.
    """
    p = K.shape[0]
    v = np.zeros(p)
    Kv = np.zeros(p)
    diag = np.diag(K)
    scale = max(1.0, float(np.max(np.abs(diag))))
    obj = 0.0
    for sweep in range(max_sweeps):
        for k in range(p):
            if diag[k] <= 0:
                continue
            grad_rest = 0.5 * (Kv[k] - diag[k] * v[k]) + (1.0 if k == j else 0.0)
            new = -np.sign(grad_rest) * max(abs(grad_rest) - eta, 0.0) / (0.5 * diag[k])
            if new != v[k]:
                Kv += (new - v[k]) * K[:, k]
                v[k] = new
        if not np.all(np.isfinite(v)) or np.abs(v).max() > 1e15:
            return v, False
        if sweep % 5 == 4:
            cand = _polish(K, j, eta, v)
            if _kkt_violation(K, j, eta, cand).max() < tol * scale:
                return cand, True
        new_obj = 0.25 * v @ Kv + v[j] + eta * np.abs(v).sum()
        if (obj - new_obj < 1e-10 * max(1.0, abs(new_obj))
                and _kkt_violation(K, j, eta, v).max() < tol * scale):
            return v, True
        obj = new_obj
    return v, False


def _solve_row_path(K, j, eta, max_steps=None):
    """Exact homotopy for ``min 1/4 v^T K v + v_j + lam |v|_1`` from ``lam = 1`` to ``eta``.

    The solution is piecewise linear in ``lam``; each segment keeps a fixed
    support and sign pattern.  Returns ``(v, ok)``; ``ok`` is false when the
    active block becomes singular (the primal is then infeasible at ``eta``).
    """
    p = K.shape[0]
    Q = 0.5 * K
    c = np.zeros(p)
    c[j] = 1.0
    v = np.zeros(p)
    lam = 1.0
    if eta >= lam:
        return v, True
    active = [j]
    signs = {j: -1.0}
    max_steps = max_steps or 20 * p + 20
    for _ in range(max_steps):
        A = np.array(active)
        sA = np.array([signs[k] for k in active])
        try:
            cf = linalg.cho_factor(Q[np.ix_(A, A)])
        except linalg.LinAlgError:
            return v, False
        a = -linalg.cho_solve(cf, c[A])
        b = -linalg.cho_solve(cf, sA)
        # residual correlation on inactive coordinates: r = pk + lam * qk
        inactive = np.setdiff1d(np.arange(p), A)
        pk = -(Q[np.ix_(inactive, A)] @ a + c[inactive])
        qk = -(Q[np.ix_(inactive, A)] @ b)
        best, event = eta, None
        upper = lam * (1 - 1e-12)
        for sgn in (1.0, -1.0):
            den = sgn - qk
            with np.errstate(divide="ignore", invalid="ignore"):
                cand = np.where(np.abs(den) > 1e-15, pk / den, -np.inf)
            cand[(cand <= best) | (cand >= upper)] = -np.inf
            if cand.size and cand.max() > best:
                i = int(cand.argmax())
                best, event = float(cand[i]), ("in", int(inactive[i]), sgn)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = np.where(np.abs(b) > 1e-15, -a / b, -np.inf)
        cand[(cand <= best) | (cand >= upper)] = -np.inf
        if cand.max() > best:
            i = int(cand.argmax())
            best, event = float(cand[i]), ("out", int(A[i]), 0.0)
        lam = best
        v = np.zeros(p)
        v[A] = a + lam * b
        if event is None:
            return v, True
        kind, k, sgn = event
        if kind == "in":
            active.append(k)
            signs[k] = sgn
        else:
            active.remove(k)
            v[k] = 0.0
            if not active:
                return v, True
    return v, False


def solve_debias_rows(H_hat, Sigma_hat, cfg: DebiasConfig | None = None, n: int | None = None):
    """Rows ``m_j`` minimizing ``m Sigma m^T`` subject to ``|H m^T - e_j|_inf <= eta``.

    Each row is solved through its Lagrange dual, an l1-regularized quadratic
    in the multipliers, either by an exact homotopy (``method="path"``) or by
    coordinate descent.  Infeasible rows trigger geometric growth of eta
    (shared by all rows).

    Returns
    -------
    M : ndarray, shape (p, p)
    eta_used : float
    """
    cfg = cfg or DebiasConfig()
    H = np.asarray(H_hat, dtype=float)
    S = np.asarray(Sigma_hat, dtype=float)
    p = H.shape[0]
    if H.shape != (p, p) or S.shape != (p, p):
        raise ValueError("H_hat and Sigma_hat must be square and of equal size")
    if cfg.eta is not None:
        eta = cfg.eta
    elif n is not None:
        eta = default_eta(n, p)
    else:
        raise ValueError("either cfg.eta or n must be given")
    # a vanishing ridge keeps the Cholesky factor defined for singular Sigma
    ridge = 1e-12 * max(float(np.trace(S)) / max(p, 1), 1e-300)
    chol = linalg.cho_factor(S + ridge * np.eye(p), lower=True)
    SinvH = linalg.cho_solve(chol, H)
    K = H @ SinvH
    K = 0.5 * (K + K.T)
    I = np.eye(p)
    for attempt in range(cfg.max_growth_steps + 1):
        M = np.zeros((p, p))
        bad = []
        for j in range(p):
            if cfg.method == "path":
                v, ok = _solve_row_path(K, j, eta)
            else:
                v, ok = _solve_row(K, j, eta)
            m = -0.5 * SinvH @ v
            resid = np.abs(H @ m - I[j]).max()
            if not ok or resid > eta + 1e-8:
                bad.append(j)
            M[j] = m
        if not bad:
            return M, eta
        if attempt < cfg.max_growth_steps:
            log.info("debiasing rows %s infeasible at eta=%g; growing", bad, eta)
            eta *= cfg.eta_growth
    raise DebiasInfeasible(bad, eta)


def covariance_estimate(d: Dataset, theta_hat: ParamVector, cfg: DebiasConfig):
    """Return ``(Sigma, zeta)`` for the configured covariance kind."""
    if cfg.covariance_kind is CovarianceKind.SANDWICH:
        return sandwich_covariance(d, theta_hat), None
    z = zeta_hat(d, theta_hat, cfg.positive_part)
    return gaussian_error_covariance(d, theta_hat, max(z, 0.0)), z


def debias_and_intervals(d: Dataset, fit: FitResult,
                         cfg: DebiasConfig | None = None) -> InferenceResult:
    """De-biased estimates with per-coordinate normal intervals and p-values."""
    cfg = cfg or DebiasConfig()
    if not fit.converged and not cfg.force:
        raise ValueError("fit did not converge; pass force=True to proceed anyway")
    if d.p == 0:
        raise ValueError("no covariates to make inference on")
    theta = fit.theta_hat
    n = d.n
    mu = predicted_mean(d, theta)
    H = _weighted_gram(d.X, mu) / n
    Sigma, zeta = covariance_estimate(d, theta, cfg)
    M, eta_used = solve_debias_rows(H, Sigma, cfg, n=n)
    b_hat = theta.beta + M @ (d.X.T @ (d.y - mu)) / n
    sigma = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", M, Sigma, M), 0.0))
    se = sigma / math.sqrt(n)
    q = stats.norm.ppf(1 - (1 - cfg.level) / 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, b_hat / se, np.where(b_hat == 0, 0.0, np.inf * np.sign(b_hat)))
    pvals = 2 * stats.norm.sf(np.abs(z))
    return InferenceResult(theta.beta.copy(), b_hat, M, sigma, b_hat - q * se, b_hat + q * se,
                           z, pvals, eta_used, cfg.covariance_kind, cfg.level, n, zeta,
                           d.covariate_names)


def rescale(res: InferenceResult, scale) -> InferenceResult:
    """Express a result computed on covariates divided by ``scale`` on the raw scale.

    z-scores and p-values are unchanged; the rows of ``M`` pick up ``1/scale``.
    """
    s = np.asarray(scale, dtype=float)
    return InferenceResult(res.beta_hat / s, res.b_hat / s, res.M / s[:, None],
                           res.sigma_hat / s, res.ci_lower / s, res.ci_upper / s,
                           res.z_scores.copy(), res.p_values.copy(), res.eta_used,
                           res.covariance_kind, res.level, res.n, res.zeta_hat, res.names)
