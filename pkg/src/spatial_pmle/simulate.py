"""Synthetic doubly-stochastic count data on an ``m x m`` lattice.

The domain ``[0, m]^2`` is split into ``m^2`` unit cells.  A finer grid of
``R x R`` cells (``R`` a multiple of ``m``) carries the latent log-intensity

    alpha0(s) + eps(s),   eps = structured GRF + heteroskedastic white noise,

and each unit cell's intensity is the midpoint-rule integral of
``exp(alpha0 + eps)`` over its fine cells, times ``P exp(X beta)``.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

from .graph import lattice_graph
from .model import Dataset


def default_beta(p: int) -> np.ndarray:
    """Default coefficient pattern: four signals for p <= 10, ten otherwise."""
    beta = np.zeros(p)
    if p <= 10:
        beta[:4] = [-1, -1, 1, 1][:p]
    else:
        beta[:5] = -1
        beta[5:10] = 1
    return beta


def default_fine_resolution(m: int, target: int = 60) -> int:
    """Smallest multiple of ``m`` that is at least ``target``."""
    return m * max(1, math.ceil(target / m))


@dataclass(frozen=True)
class Scenario:
    m: int = 10
    p: int = 10
    beta_true: tuple | None = None
    grf_range: float | None = None
    grf_variance: float = 1.0
    fine_grid: int | None = None
    invgamma_shape: float = 2.0
    invgamma_rate: float = 1.0
    offset: float = 2.0
    covariate_low: float = -0.5
    covariate_high: float = 0.5
    seed: int = 0
    baseline: bool = True
    structured: bool = True
    unstructured: bool = True

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("m must be at least 2")
        if self.p < 1:
            raise ValueError("p must be at least 1")
        beta = (default_beta(self.p) if self.beta_true is None
                else np.asarray(self.beta_true, float))
        if beta.shape != (self.p,):
            raise ValueError("beta_true must have length p")
        object.__setattr__(self, "beta_true", tuple(float(b) for b in beta))
        if self.grf_range is None:
            object.__setattr__(self, "grf_range", 0.2 * self.m)
        if self.fine_grid is None:
            object.__setattr__(self, "fine_grid", default_fine_resolution(self.m))
        if self.fine_grid % self.m:
            raise ValueError("fine_grid must be a multiple of m")
        if self.grf_range <= 0 or self.grf_variance < 0 or self.offset <= 0:
            raise ValueError("grf_range and offset must be positive, grf_variance nonnegative")

    @property
    def n(self) -> int:
        return self.m * self.m

    @property
    def beta(self) -> np.ndarray:
        return np.asarray(self.beta_true)

    def baseline_fn(self, s1, s2):
        """``alpha0(s) = |s| / (4 m)``."""
        return np.hypot(s1, s2) / (4.0 * self.m)

    def fine_midpoints(self) -> np.ndarray:
        """Fine-cell midpoints, row-major with the second coordinate slowest."""
        h = self.m / self.fine_grid
        c = (np.arange(self.fine_grid) + 0.5) * h
        s1, s2 = np.meshgrid(c, c)
        return np.column_stack([s1.ravel(), s2.ravel()])

    def fine_to_cell(self) -> np.ndarray:
        """Unit-cell index of each fine cell (same ordering as ``fine_midpoints``)."""
        k = self.fine_grid // self.m
        a = np.arange(self.fine_grid) // k
        col, row = np.meshgrid(a, a)
        return (row * self.m + col).ravel()

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


@dataclass
class Replicate:
    dataset: Dataset
    intensity: np.ndarray
    eps: np.ndarray = field(repr=False)
    unstructured_var: np.ndarray | None = field(default=None, repr=False)
    seed: tuple = ()


def exponential_covariance(points, range_: float, variance: float) -> np.ndarray:
    return variance * np.exp(-cdist(points, points) / range_)


@functools.lru_cache(maxsize=4)
def _cached_factor(key: bytes, shape: tuple, range_: float, variance: float):
    points = np.frombuffer(key).reshape(shape)
    C = exponential_covariance(points, range_, variance)
    try:
        return linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError:
        pass
    C[np.diag_indices_from(C)] += 1e-10
    try:
        return linalg.cholesky(C, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise linalg.LinAlgError("covariance factorization failed after jitter") from exc


def grf_factor(points, range_: float, variance: float) -> np.ndarray:
    """Lower Cholesky factor of the exponential covariance (cached)."""
    pts = np.ascontiguousarray(points, dtype=float)
    return _cached_factor(pts.tobytes(), pts.shape, float(range_), float(variance))


def sample_grf(points, range_: float, variance: float, seed=None, size: int | None = None):
    """Zero-mean Gaussian field with covariance ``variance * exp(-dist / range_)``.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.  With
    ``size`` given, returns an array of shape ``(size, n_points)``.
    """
    pts = np.asarray(points, dtype=float)
    rng = np.random.default_rng(seed)
    if variance == 0:
        return np.zeros(pts.shape[0] if size is None else (size, pts.shape[0]))
    Lc = grf_factor(pts, range_, variance)
    z = rng.standard_normal(pts.shape[0] if size is None else (size, pts.shape[0]))
    return z @ Lc.T if size is not None else Lc @ z


def _streams(sc: Scenario, rep_seed):
    ss = np.random.SeedSequence([int(sc.seed), int(rep_seed)])
    return [np.random.default_rng(s) for s in ss.spawn(5)]


def latent_field(sc: Scenario, rng_grf, rng_var, rng_noise):
    """Sample ``eps`` on the fine grid; returns ``(eps, unstructured variances)``."""
    pts = sc.fine_midpoints()
    eps = np.zeros(pts.shape[0])
    var = None
    if sc.structured:
        eps += sample_grf(pts, sc.grf_range, sc.grf_variance, rng_grf)
    if sc.unstructured:
        # InvGamma(shape, rate): reciprocal of Gamma(shape, scale=1/rate)
        var = 1.0 / rng_var.gamma(sc.invgamma_shape, 1.0 / sc.invgamma_rate, pts.shape[0])
        eps += rng_noise.standard_normal(pts.shape[0]) * np.sqrt(var)
    return eps, var


def cell_integral(sc: Scenario, eps: np.ndarray) -> np.ndarray:
    """Midpoint rule for ``int_{cell} exp(alpha0 + eps) ds`` on each unit cell."""
    pts = sc.fine_midpoints()
    a0 = sc.baseline_fn(pts[:, 0], pts[:, 1]) if sc.baseline else 0.0
    h2 = (sc.m / sc.fine_grid) ** 2
    return np.bincount(sc.fine_to_cell(), weights=np.exp(a0 + eps) * h2, minlength=sc.n)


def sample_counts(intensity, seed=None, size: int | None = None) -> np.ndarray:
    """Poisson counts given the cell intensities."""
    lam = np.asarray(intensity, dtype=float)
    return np.random.default_rng(seed).poisson(lam, None if size is None else (size, lam.size))


def generate_replicate(sc: Scenario, rep_seed: int = 0) -> Replicate:
    """One dataset drawn from the scenario; deterministic in ``(sc, rep_seed)``."""
    rng_grf, rng_var, rng_noise, rng_cov, rng_y = _streams(sc, rep_seed)
    eps, var = latent_field(sc, rng_grf, rng_var, rng_noise)
    X = rng_cov.uniform(sc.covariate_low, sc.covariate_high, (sc.n, sc.p))
    lam = sc.offset * np.exp(X @ sc.beta) * cell_integral(sc, eps)
    y = sample_counts(lam, rng_y)
    ids = tuple(f"c{r:03d}_{c:03d}" for r in range(sc.m) for c in range(sc.m))
    d = Dataset(y, np.full(sc.n, sc.offset), np.ones(sc.n), X, ids,
                tuple(f"x{j + 1}" for j in range(sc.p)))
    return Replicate(d, lam, eps, var, (sc.seed, rep_seed))


def scenario_graph(sc: Scenario):
    """Rook-adjacency graph whose region ids match ``generate_replicate``."""
    ids = tuple(f"c{r:03d}_{c:03d}" for r in range(sc.m) for c in range(sc.m))
    return lattice_graph(sc.m, ids)


def evaluate_replicates(results, beta_true, alpha: float = 0.05) -> dict:
    """Coverage, type I error, power and element-wise error summaries.

    Coverage averages over every coordinate; type I error over the null
    coordinates; power over the non-null ones.  A coordinate is rejected
    when its p-value is below ``alpha``.
    """
    results = list(results)
    if not results:
        raise ValueError("no replicates to evaluate")
    beta = np.asarray(beta_true, dtype=float)
    lo = np.array([r.ci_lower for r in results])
    hi = np.array([r.ci_upper for r in results])
    pv = np.array([r.p_values for r in results])
    b = np.array([r.b_hat for r in results])
    covered = (lo <= beta) & (beta <= hi)
    reject = pv < alpha
    null = beta == 0
    err = b - beta
    return {
        "n_replicates": len(results),
        "coverage": float(covered.mean()),
        "type_i_error": float(reject[:, null].mean()) if null.any() else float("nan"),
        "power": float(reject[:, ~null].mean()) if (~null).any() else float("nan"),
        "coverage_by_coef": covered.mean(axis=0),
        "rejection_by_coef": reject.mean(axis=0),
        "bias": err.mean(axis=0),
        "error_quantiles": np.quantile(err, [0.025, 0.25, 0.5, 0.75, 0.975], axis=0),
        "l1_error": np.abs(np.array([r.beta_hat for r in results]) - beta).sum(axis=1),
    }
