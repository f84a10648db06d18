"""End-to-end replicate analysis: tune, fit, de-bias, evaluate."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .inference import DebiasConfig, InferenceResult, debias_and_intervals
from .predict import TuningGrid, make_folds, tune
from .simulate import Scenario, evaluate_replicates, generate_replicate, scenario_graph
from .solver import FitResult, SolverConfig, fit

log = logging.getLogger(__name__)

DEFAULT_GAMMAS = (3.0, 10.0, 30.0)
DEFAULT_TAUS = (0.3, 1.0, 3.0)


@dataclass
class ReplicateOutcome:
    rep_seed: int
    gamma: float
    tau: float
    fit: FitResult
    inference: InferenceResult


def analyze(d, g, grid: TuningGrid, scfg: SolverConfig | None = None,
            dcfg: DebiasConfig | None = None, k: int = 5, seed: int = 0):
    """CV-tune on ``grid``, refit on all regions and de-bias."""
    scfg = scfg or SolverConfig()
    plan = make_folds(g, k, seed)
    gamma, tau, _ = tune(d, g, grid, scfg, plan)
    res = fit(d, g, grid.config(gamma, tau), scfg)
    inf = debias_and_intervals(d, res, dcfg or DebiasConfig(force=True))
    return gamma, tau, res, inf


def run_replicate(sc: Scenario, rep_seed: int, grid: TuningGrid,
                  scfg: SolverConfig | None = None, dcfg: DebiasConfig | None = None,
                  k: int = 5) -> ReplicateOutcome:
    rep = generate_replicate(sc, rep_seed)
    gamma, tau, res, inf = analyze(rep.dataset, scenario_graph(sc), grid, scfg, dcfg, k,
                                   seed=rep_seed)
    return ReplicateOutcome(rep_seed, gamma, tau, res, inf)


def run_bench(sc: Scenario, n_replicates: int, grid: TuningGrid | None = None,
              scfg: SolverConfig | None = None, dcfg: DebiasConfig | None = None,
              k: int = 5, n_jobs: int = 1, first_seed: int = 0):
    """Analyze ``n_replicates`` seeded replicates and summarize them.

    Returns ``(metrics, outcomes)``.
    """
    if n_replicates < 1:
        raise ValueError("need at least one replicate")
    grid = grid or TuningGrid(list(DEFAULT_GAMMAS), list(DEFAULT_TAUS))
    seeds = range(first_seed, first_seed + n_replicates)
    if n_jobs == 1:
        outcomes = [run_replicate(sc, s, grid, scfg, dcfg, k) for s in seeds]
    else:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=n_jobs)(
            delayed(run_replicate)(sc, s, grid, scfg, dcfg, k) for s in seeds)
    metrics = evaluate_replicates([o.inference for o in outcomes], sc.beta)
    metrics["gamma_selected"] = np.array([o.gamma for o in outcomes])
    metrics["tau_selected"] = np.array([o.tau for o in outcomes])
    return metrics, outcomes
