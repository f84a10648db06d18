"""Baseline prediction for unseen regions, k-fold cross-validation and grid tuning."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .graph import RegionGraph, laplacian, partition_laplacian
from .model import Dataset, DataError, _mean, linear_predictor
from .penalties import FusionKind, PenaltyConfig
from .solver import SolverConfig, SolverDivergence, fit

log = logging.getLogger(__name__)

#: Above this many test regions the block solve switches to conjugate gradients.
DIRECT_SOLVE_LIMIT = 10_000


class SingularBlockError(np.linalg.LinAlgError):
    """The test block of the Laplacian cannot be inverted."""


def cohesion_predict(L, train_idx, alpha_train) -> np.ndarray:
    """Harmonic extension ``-L22^{-1} L21 alpha_train`` of fitted baselines.

    Test regions are the complement of ``train_idx`` in increasing index
    order.  Connected groups of test regions with no edge into the training
    set are predicted as 0 (the minimum-norm minimizer when ``L`` has no ridge).
    """
    L = sp.csr_matrix(L)
    train_idx = np.asarray(train_idx, dtype=np.int64)
    alpha_train = np.asarray(alpha_train, dtype=float)
    if alpha_train.shape != train_idx.shape:
        raise ValueError("alpha_train must align with train_idx")
    _, _, L21, L22 = partition_laplacian(L, train_idx)
    n_test = L22.shape[0]
    out = np.zeros(n_test)

    n_comp, labels = csgraph.connected_components(L22, directed=False)
    touches = np.zeros(n_comp, dtype=bool)
    linked = np.asarray(abs(L21).sum(axis=1)).ravel() > 0
    touches[labels[linked]] = True
    # untouched components have a zero right-hand side, so 0 solves them
    solve = touches[labels]
    idx = np.flatnonzero(solve)
    if idx.size == 0:
        return out
    A = L22[idx][:, idx].tocsc()
    rhs = -(L21[idx] @ alpha_train)
    if idx.size <= DIRECT_SOLVE_LIMIT:
        try:
            x = spla.splu(A).solve(rhs)
        except RuntimeError as exc:
            raise SingularBlockError(
                "test block of the Laplacian is singular; retry with a ridge delta > 0"
            ) from exc
    else:
        x, info = spla.cg(A, rhs, rtol=1e-10, maxiter=10 * idx.size)
        if info != 0:
            raise SingularBlockError("conjugate gradients did not converge on the test block")
    if not np.all(np.isfinite(x)):
        raise SingularBlockError("test block of the Laplacian is singular")
    out[idx] = x
    return out


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignment: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        if a.min(initial=0) < 0 or a.max(initial=-1) >= self.k:
            raise ValueError("fold ids must lie in [0, k)")
        if np.bincount(a, minlength=self.k).min() == 0:
            raise ValueError("every fold must be nonempty")
        a.setflags(write=False)
        object.__setattr__(self, "assignment", a)

    def folds(self):
        """Yield ``(train_idx, test_idx)`` pairs."""
        for f in range(self.k):
            yield np.flatnonzero(self.assignment != f), np.flatnonzero(self.assignment == f)


def make_folds(g: RegionGraph | int, k: int, seed: int | None = None) -> FoldPlan:
    """Uniformly random, balanced assignment of regions to ``k`` folds."""
    n = g if isinstance(g, (int, np.integer)) else g.n
    if not 2 <= k <= n:
        raise ValueError(f"k must lie in [2, {n}], got {k}")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    assignment[rng.permutation(n)] = np.arange(n) % k
    return FoldPlan(k, assignment, seed)


def _score(y, mu, metric: str) -> float:
    if metric == "mse":
        return float(np.mean((y - mu) ** 2))
    if metric == "deviance":
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(y > 0, y * np.log(y / mu), 0.0)
        return float(np.mean(2.0 * (t - (y - mu))))
    raise ValueError(f"unknown metric {metric!r}")


def predict_heldout(d: Dataset, g: RegionGraph, train_idx, theta_train, predict_delta=0.0):
    """Predicted baselines and means on the complement of ``train_idx``."""
    L = laplacian(g, predict_delta)
    alpha_test = cohesion_predict(L, train_idx, theta_train.alpha)
    mask = np.ones(d.n, dtype=bool)
    mask[np.asarray(train_idx)] = False
    test = d.subset(np.flatnonzero(mask))
    mu = _mean(test, linear_predictor(test, alpha_test, theta_train.beta))
    return alpha_test, mu


def cv_score(d: Dataset, g: RegionGraph, pcfg: PenaltyConfig, scfg: SolverConfig | None,
             plan: FoldPlan, metric: str = "mse", predict_delta: float = 0.0,
             warm: dict | None = None, fold_scores: list | None = None) -> float:
    """Mean held-out score over folds; ``inf`` if any fold fit diverges.

    ``warm`` maps fold id to a ``ParamVector`` used as a warm start and is
    updated in place with each fold's solution.  Per-fold scores are appended
    to ``fold_scores`` when it is given.
    """
    scfg = scfg or SolverConfig()
    if plan.assignment.size != d.n:
        raise ValueError("fold plan does not match the dataset")
    scores = []
    for f, (train, test) in enumerate(plan.folds()):
        sub_d, sub_g = d.subset(train), g.subgraph(train)
        cfg = scfg
        if warm is not None and f in warm:
            cfg = SolverConfig(**{**scfg.__dict__, "init": warm[f]})
        try:
            res = fit(sub_d, sub_g, pcfg, cfg)
        except (SolverDivergence, DataError, FloatingPointError) as exc:
            log.info("fold %d diverged for %s: %s", f, pcfg, exc)
            return math.inf
        if warm is not None:
            warm[f] = res.theta_hat
        _, mu = predict_heldout(d, g, train, res.theta_hat, predict_delta)
        s = _score(d.y[test], mu, metric)
        if not math.isfinite(s):
            return math.inf
        scores.append(s)
    if fold_scores is not None:
        fold_scores.extend(scores)
    return float(np.mean(scores))


@dataclass
class TuningGrid:
    gamma_values: list
    tau_values: list
    fusion_kind: FusionKind = FusionKind.L2
    cv_scores: dict = field(default_factory=dict)
    xi: float | None = None
    delta: float | None = None

    def __post_init__(self):
        self.fusion_kind = FusionKind(self.fusion_kind)
        if not self.gamma_values or not self.tau_values:
            raise ValueError("tuning grid must be nonempty")

    def config(self, gamma, tau) -> PenaltyConfig:
        kw = {}
        if self.delta is not None:
            kw["delta"] = self.delta
        return PenaltyConfig(gamma=gamma, tau=tau, fusion_kind=self.fusion_kind,
                             xi=self.xi, **kw)


def tune(d: Dataset, g: RegionGraph, grid: TuningGrid, scfg: SolverConfig | None,
         plan: FoldPlan, metric: str = "mse", predict_delta: float = 0.0, n_jobs: int = 1):
    """Pick ``(gamma, tau)`` with the smallest CV score.

    Ties go to the larger tau, then the larger gamma.  Within a tau row the
    gammas are visited in increasing order, warm-starting each fold fit from
    the previous cell.
    """
    gammas = sorted(grid.gamma_values)
    taus = sorted(grid.tau_values)

    def row(tau):
        warm = {}
        return [(gam, tau, cv_score(d, g, grid.config(gam, tau), scfg, plan, metric,
                                    predict_delta, warm)) for gam in gammas]

    if n_jobs == 1:
        rows = [row(t) for t in taus]
    else:
        from joblib import Parallel, delayed
        rows = Parallel(n_jobs=n_jobs)(delayed(row)(t) for t in taus)
    scores = {(gam, tau): s for r in rows for gam, tau, s in r}
    grid.cv_scores = scores
    finite = {k: v for k, v in scores.items() if math.isfinite(v)}
    if not finite:
        raise ArithmeticError("every grid cell diverged")
    best = min(finite.values())
    ties = [k for k, v in finite.items() if v == best]
    gamma_star, tau_star = max(ties, key=lambda k: (k[1], k[0]))
    return gamma_star, tau_star, scores
