"""Proximal gradient descent for the penalized Poisson objective.

The objective is

    f(alpha, beta) = -loglik(alpha, beta) + fusion(alpha) + tau * |beta|_1

where ``fusion`` is either ``gamma / 2 * alpha^T (L + delta I) alpha`` or the
smoothed ``gamma * |B alpha|_1``.  The smooth part is handled by a gradient
step with backtracking; the l1 term by soft-thresholding the beta block.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import model
from .graph import RegionGraph, incidence
from .model import Dataset, ParamVector, ETA_CLAMP
from .penalties import FusionKind, PenaltyConfig, fusion_term, soft_threshold

log = logging.getLogger(__name__)

#: Below this many regions the l2 fusion matrix is held densely (faster matvecs).
DENSE_LIMIT = 500


class SolverDivergence(ArithmeticError):
    """Raised when the objective becomes non-finite."""


class Init(str, enum.Enum):
    DATA_DRIVEN = "data"
    ZERO = "zero"


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule and line-search constants.

    ``init`` is ``Init.DATA_DRIVEN``, ``Init.ZERO`` or a ``ParamVector`` used
    as a warm start.  ``line_search="literal"`` shrinks the step while
    ``L(theta - eta grad) - L(theta) >= -a |theta|^2``; the default
    ``"armijo"`` requires ``f(theta+) <= f(theta) - (a / eta) |theta+ - theta|^2``.
    Each line search starts at step 1, or at ``min(1, previous / b)`` when
    ``warm_step`` is set.
    """

    tol: float = 1e-7
    max_iter: int = 5000
    a: float = 1e-4
    b: float = 0.5
    block_alternating: bool = False
    init: object = Init.DATA_DRIVEN
    line_search: str = "armijo"
    max_backtracks: int = 60
    warm_step: bool = False

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 0 < self.b < 1:
            raise ValueError("b must lie in (0, 1)")
        if not self.a > 0:
            raise ValueError("a must be positive")
        if self.line_search not in ("armijo", "literal"):
            raise ValueError("line_search must be 'armijo' or 'literal'")
        if not isinstance(self.init, ParamVector):
            object.__setattr__(self, "init", Init(self.init))

    def to_dict(self) -> dict:
        init = "warm" if isinstance(self.init, ParamVector) else self.init.value
        return {"tol": self.tol, "max_iter": self.max_iter, "a": self.a, "b": self.b,
                "block_alternating": self.block_alternating, "init": init,
                "line_search": self.line_search, "warm_step": self.warm_step}


@dataclass
class FitResult:
    theta_hat: ParamVector
    objective_trace: np.ndarray
    iterations: int
    converged: bool
    penalty: PenaltyConfig
    solver: SolverConfig
    region_ids: tuple = field(default=())
    covariate_names: tuple = field(default=())

    @property
    def alpha(self) -> np.ndarray:
        return self.theta_hat.alpha

    @property
    def beta(self) -> np.ndarray:
        return self.theta_hat.beta

    @property
    def objective(self) -> float:
        return float(self.objective_trace[-1])


class _Problem:
    """Closure over data, incidence matrix and penalty for fast evaluation."""

    def __init__(self, d: Dataset, B, pcfg: PenaltyConfig):
        self.d, self.B, self.pcfg = d, B, pcfg
        # one sparse product per evaluation instead of B^T (B a)
        self.Lt = None
        if pcfg.fusion_kind is FusionKind.L2 and pcfg.gamma > 0:
            self.Lt = (B.T @ B + pcfg.delta * sp.identity(d.n, format="csr")).tocsr()
            if d.n <= DENSE_LIMIT:
                self.Lt = self.Lt.toarray()

    def fusion(self, alpha):
        if self.Lt is None:
            return fusion_term(alpha, self.B, self.pcfg)
        g = self.Lt @ alpha
        return 0.5 * self.pcfg.gamma * float(alpha @ g), self.pcfg.gamma * g

    def smooth(self, alpha, beta) -> float:
        fus, _ = self.fusion(alpha)
        return -model._loglik_raw(self.d, alpha, beta) + fus

    def smooth_and_grad(self, alpha, beta):
        d = self.d
        eta = model.linear_predictor(d, alpha, beta)
        mu = model._mean(d, eta)
        fus, gfus = self.fusion(alpha)
        value = -float(d.y @ (d.log_offset + eta) - mu.sum()) + fus
        r = mu - d.y
        return value, r + gfus, d.X.T @ r

    def total(self, alpha, beta) -> float:
        return self.smooth(alpha, beta) + self.pcfg.tau * float(np.abs(beta).sum())


def objective(d: Dataset, theta: ParamVector, B, pcfg: PenaltyConfig) -> float:
    """Penalized objective ``-loglik + fusion + tau |beta|_1``."""
    model._check(d, theta)
    return _Problem(d, B, pcfg).total(theta.alpha, theta.beta)


def initial_params(d: Dataset, init) -> ParamVector:
    if isinstance(init, ParamVector):
        if init.alpha.size != d.n or init.beta.size != d.p:
            raise model.DataError("warm start has the wrong shape")
        return init
    if Init(init) is Init.ZERO:
        return ParamVector.zeros(d.n, d.p)
    return ParamVector(np.log((d.y + 0.5) / d.exposure), np.zeros(d.p))


def _prepare(d: Dataset, g: RegionGraph, pcfg: PenaltyConfig):
    if g.n != d.n:
        raise model.DataError(f"graph has {g.n} regions but dataset has {d.n}")
    return _Problem(d, incidence(g), pcfg)


def _backtrack(prob, alpha, beta, f, ga, gb, scfg, move_alpha=True, move_beta=True,
               step=1.0):
    """Return the accepted ``(alpha, beta, f, step)`` or ``None``."""
    tau = prob.pcfg.tau
    if scfg.line_search == "literal":
        smooth0 = f - tau * float(np.abs(beta).sum())
        norm2 = float(alpha @ alpha + beta @ beta)
    for _ in range(scfg.max_backtracks):
        a_new = np.clip(alpha - step * ga, -ETA_CLAMP, ETA_CLAMP) if move_alpha else alpha
        if move_beta:
            b_half = beta - step * gb
            b_new = soft_threshold(b_half, step * tau)
        else:
            b_half = b_new = beta
        if scfg.line_search == "armijo":
            f_new = prob.total(a_new, b_new)
            moved = float(np.sum((a_new - alpha) ** 2) + np.sum((b_new - beta) ** 2))
            if np.isfinite(f_new) and f_new <= f - scfg.a / step * moved:
                return a_new, b_new, f_new, step
        else:
            trial = prob.smooth(alpha - step * ga if move_alpha else alpha, b_half)
            if np.isfinite(trial) and trial - smooth0 < -scfg.a * norm2:
                return a_new, b_new, prob.total(a_new, b_new), step
        step *= scfg.b
    return None


def fit(d: Dataset, g: RegionGraph, pcfg: PenaltyConfig,
        scfg: SolverConfig | None = None) -> FitResult:
    """Minimize the penalized objective by proximal gradient descent.

    Raises
    ------
    SolverDivergence
        If the objective becomes non-finite.
    """
    scfg = scfg or SolverConfig()
    if scfg.block_alternating:
        return fit_block_alternating(d, g, pcfg, scfg)
    prob = _prepare(d, g, pcfg)
    theta0 = initial_params(d, scfg.init)
    alpha, beta = theta0.alpha.copy(), theta0.beta.copy()
    f = prob.total(alpha, beta)
    if not np.isfinite(f):
        raise SolverDivergence("objective is not finite at the initial point")
    trace = [f]
    converged = False
    it = 0
    step = 1.0
    for it in range(1, scfg.max_iter + 1):
        _, ga, gb = prob.smooth_and_grad(alpha, beta)
        start = min(1.0, step / scfg.b) if scfg.warm_step else 1.0
        accepted = _backtrack(prob, alpha, beta, f, ga, gb, scfg, step=start)
        if accepted is None:
            # no decrease representable in floating point: stationary
            converged = True
            it -= 1
            break
        alpha, beta, f_new, step = accepted
        if not np.isfinite(f_new):
            raise SolverDivergence(f"objective became non-finite at iteration {it}")
        trace.append(f_new)
        done = abs(f_new - f) < scfg.tol * abs(f)
        f = f_new
        if done:
            converged = True
            break
    if not converged:
        log.warning("proximal gradient hit max_iter=%d without converging", scfg.max_iter)
    return FitResult(ParamVector(alpha, beta), np.asarray(trace), it, converged, pcfg, scfg,
                     d.region_ids, d.covariate_names)


def fit_block_alternating(d: Dataset, g: RegionGraph, pcfg: PenaltyConfig,
                          scfg: SolverConfig | None = None) -> FitResult:
    """Alternate proximal gradient steps on the baselines and on beta."""
    scfg = scfg or SolverConfig(block_alternating=True)
    prob = _prepare(d, g, pcfg)
    theta0 = initial_params(d, scfg.init)
    alpha, beta = theta0.alpha.copy(), theta0.beta.copy()
    f = prob.total(alpha, beta)
    if not np.isfinite(f):
        raise SolverDivergence("objective is not finite at the initial point")
    trace = [f]
    converged = False
    it = 0
    step_a = step_b = 1.0
    for it in range(1, scfg.max_iter + 1):
        f_start = f
        stuck = 0
        _, ga, _ = prob.smooth_and_grad(alpha, beta)
        start = min(1.0, step_a / scfg.b) if scfg.warm_step else 1.0
        res = _backtrack(prob, alpha, beta, f, ga, None, scfg, move_beta=False, step=start)
        if res is None:
            stuck += 1
        else:
            alpha, beta, f, step_a = res
        if d.p:
            _, _, gb = prob.smooth_and_grad(alpha, beta)
            start = min(1.0, step_b / scfg.b) if scfg.warm_step else 1.0
            res = _backtrack(prob, alpha, beta, f, None, gb, scfg, move_alpha=False,
                             step=start)
            if res is None:
                stuck += 1
            else:
                alpha, beta, f, step_b = res
        else:
            stuck += 1
        if not np.isfinite(f):
            raise SolverDivergence(f"objective became non-finite at iteration {it}")
        if stuck == 2:
            converged = True
            it -= 1
            break
        trace.append(f)
        if abs(f - f_start) < scfg.tol * abs(f_start):
            converged = True
            break
    if not converged:
        log.warning("block-alternating descent hit max_iter=%d without converging",
                    scfg.max_iter)
    return FitResult(ParamVector(alpha, beta), np.asarray(trace), it, converged, pcfg, scfg,
                     d.region_ids, d.covariate_names)
