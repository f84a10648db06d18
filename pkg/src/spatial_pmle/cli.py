"""Command-line entry point: ``spatial-pmle <command> ...``.

Exit status is 0 on success, 1 on invalid input and 2 on numerical failure.
Every command writes its results plus one ``manifest.json`` (or
``<output>.manifest.json`` for single-file outputs).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .graph import laplacian
from .inference import DebiasConfig, debias_and_intervals, rescale
from .model import (
    DataError, _mean, linear_predictor, standardize, to_original_scale,
    to_standard_scale,
)
from .penalties import FusionKind, PenaltyConfig
from .pipeline import DEFAULT_GAMMAS, DEFAULT_TAUS, run_bench
from .predict import TuningGrid, cohesion_predict, make_folds, tune
from .simulate import Scenario, generate_replicate, scenario_graph
from .solver import FitResult, SolverConfig, fit

log = logging.getLogger("spatial_pmle")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; that code means numerical failure here
    def error(self, message):
        raise UsageError(message)


def _data_args(p):
    p.add_argument("--regions", required=True, help="region_id,area,offset,count CSV")
    p.add_argument("--covariates", required=True, help="region_id,x1,...,xp CSV")
    p.add_argument("--edges", required=True, help="region_i,region_j[,weight] CSV")


def _penalty_args(p):
    p.add_argument("--fusion", choices=["l1", "l2"], default="l2")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--xi", type=float, default=None, help="smoothing parameter for l1 fusion")
    p.add_argument("--delta", type=float, default=None, help="Laplacian ridge for l2 fusion")


def _solver_args(p):
    p.add_argument("--tol", type=float, default=1e-7)
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--block-alternating", action="store_true")
    p.add_argument("--line-search", choices=["armijo", "literal"], default="armijo")
    p.add_argument("--standardize", action="store_true",
                   help="center and scale covariates before fitting (reported on raw scale)")


def _debias_args(p):
    p.add_argument("--eta", type=float, default=None)
    p.add_argument("--covariance", choices=["sandwich", "gaussian"], default="sandwich")
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--force", action="store_true", help="allow a non-converged fit")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="spatial-pmle", description="Penalized Poisson regression on region graphs")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw one synthetic replicate")
    p.add_argument("--scenario", help="scenario JSON (fields of Scenario)")
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--seed", type=int, help="scenario seed (overrides the JSON)")
    p.add_argument("--rep-seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit", help="penalized fit")
    _data_args(p)
    _penalty_args(p)
    _solver_args(p)
    p.add_argument("--out", required=True, help="fit JSON path")

    p = sub.add_parser("infer", help="de-biased estimates and intervals")
    _data_args(p)
    p.add_argument("--fit", help="fit JSON; if omitted the model is fitted first")
    _penalty_args(p)
    _solver_args(p)
    _debias_args(p)
    p.add_argument("--out", required=True, help="inference JSON path")

    p = sub.add_parser("cv", help="cross-validated tuning and refit")
    _data_args(p)
    p.add_argument("--grid", help='JSON {"gamma": [...], "tau": [...], "fusion", "k", "seed"}')
    p.add_argument("--gamma", type=float, nargs="+")
    p.add_argument("--tau", type=float, nargs="+")
    p.add_argument("--fusion", choices=["l1", "l2"])
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--metric", choices=["mse", "deviance"], default="mse")
    p.add_argument("--threads", type=int, default=1)
    _solver_args(p)
    p.add_argument("--out", required=True, help="tuned fit JSON path")

    p = sub.add_parser("predict", help="cohesion prediction on an extended graph")
    p.add_argument("--fit", required=True)
    _data_args(p)
    p.add_argument("--delta", type=float, default=0.0, help="ridge on the prediction Laplacian")
    p.add_argument("--out", required=True, help="prediction CSV path")

    p = sub.add_parser("bench", help="replicate study: coverage, type I error, power")
    p.add_argument("--scenario", help="scenario JSON")
    p.add_argument("--m", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--grid", help="tuning grid JSON")
    p.add_argument("--seed", type=int, default=0, help="first replicate seed")
    p.add_argument("--threads", type=int, default=1)
    _debias_args(p)
    p.add_argument("--out", required=True, help="output directory")
    return ap


# -- helpers ---------------------------------------------------------------

def _manifest_path(out: Path) -> Path:
    return out / "manifest.json" if out.suffix == "" else out.with_suffix(".manifest.json")


def _penalty(a) -> PenaltyConfig:
    kw = {} if a.delta is None else {"delta": a.delta}
    return PenaltyConfig(gamma=a.gamma, tau=a.tau, fusion_kind=a.fusion, xi=a.xi, **kw)


def _solver(a, **extra) -> SolverConfig:
    return SolverConfig(tol=a.tol, max_iter=a.max_iter, block_alternating=a.block_alternating,
                        line_search=a.line_search, **extra)


def _debias(a) -> DebiasConfig:
    return DebiasConfig(eta=a.eta, covariance_kind=a.covariance, level=a.level, force=a.force)


def _fit(d, g, pcfg, scfg, std: bool):
    """Fit, optionally on standardized covariates; parameters returned on the raw scale."""
    if not std:
        return fit(d, g, pcfg, scfg)
    ds, c, s = standardize(d)
    res = fit(ds, g, pcfg, scfg)
    res.theta_hat = to_original_scale(res.theta_hat, c, s)
    return res


def _scenario(a) -> Scenario:
    doc = io.read_json(a.scenario) if a.scenario else {}
    for key in ("m", "p"):
        if getattr(a, key, None) is not None:
            doc[key] = getattr(a, key)
    if getattr(a, "command", "") == "simulate" and a.seed is not None:
        doc["seed"] = a.seed
    try:
        return Scenario(**doc)
    except TypeError as exc:
        raise DataError(f"bad scenario: {exc}") from None


def _grid(a):
    doc = io.read_json(a.grid) if getattr(a, "grid", None) else {}
    gam = getattr(a, "gamma", None) or doc.get("gamma", list(DEFAULT_GAMMAS))
    tau = getattr(a, "tau", None) or doc.get("tau", list(DEFAULT_TAUS))
    fusion = getattr(a, "fusion", None) or doc.get("fusion", "l2")
    k = getattr(a, "k", None) or doc.get("k", 5)
    seed = getattr(a, "seed", None)
    seed = doc.get("seed", 1) if seed is None else seed
    if isinstance(a, argparse.Namespace) and a.command == "bench":
        seed = doc.get("seed", 1)
    return TuningGrid(list(gam), list(tau), FusionKind(fusion)), int(k), int(seed)


# -- commands ---------------------------------------------------------------

def cmd_simulate(a):
    sc = _scenario(a)
    out = Path(a.out)
    man = io.RunManifest("simulate", {"scenario": a.scenario}, sc.to_dict() | {
        "rep_seed": a.rep_seed}, sc.seed)
    rep = generate_replicate(sc, a.rep_seed)
    io.write_dataset(rep.dataset, scenario_graph(sc), out)
    pts = sc.fine_midpoints()
    cell = sc.fine_to_cell()
    ids = rep.dataset.region_ids
    var = rep.unstructured_var if rep.unstructured_var is not None else np.zeros(len(pts))
    io.write_csv(out / "latent.csv",
                 ["s1", "s2", "region_id", "eps", "unstructured_var", "cell_intensity"],
                 ([float(pts[i, 0]), float(pts[i, 1]), ids[cell[i]], float(rep.eps[i]),
                   float(var[i]), float(rep.intensity[cell[i]])] for i in range(len(pts))))
    man.write(out / "manifest.json")
    return EXIT_OK


def cmd_fit(a):
    d, g = io.load_dataset(a.regions, a.covariates, a.edges)
    pcfg, scfg = _penalty(a), _solver(a)
    man = io.RunManifest("fit", _inputs(a), {"penalty": pcfg.to_dict(),
                                             "solver": scfg.to_dict(),
                                             "standardize": a.standardize})
    res = _fit(d, g, pcfg, scfg, a.standardize)
    io.write_json(a.out, io.fit_to_dict(res, a.standardize))
    man.write(_manifest_path(Path(a.out)))
    return EXIT_OK


def cmd_infer(a):
    d, g = io.load_dataset(a.regions, a.covariates, a.edges)
    dcfg = _debias(a)
    config = {"debias": {"eta": dcfg.eta, "covariance_kind": dcfg.covariance_kind.value,
                         "level": dcfg.level}, "standardize": a.standardize}
    if a.fit:
        doc = io.read_json(a.fit)
        theta = io.theta_from_fit_json(doc, d)
        pcfg = io.penalty_from_dict(doc.get("penalty", {}))
        res = FitResult(theta, np.array([np.nan]), int(doc.get("iterations", 0)),
                        bool(doc.get("converged", True)), pcfg, SolverConfig(),
                        d.region_ids, d.covariate_names)
    else:
        pcfg, scfg = _penalty(a), _solver(a)
        config |= {"penalty": pcfg.to_dict(), "solver": scfg.to_dict()}
        res = _fit(d, g, pcfg, scfg, a.standardize)
    man = io.RunManifest("infer", _inputs(a), config)
    if a.standardize:
        ds, c, s = standardize(d)
        res.theta_hat = to_standard_scale(res.theta_hat, c, s)
        inf = rescale(debias_and_intervals(ds, res, dcfg), s)
    else:
        inf = debias_and_intervals(d, res, dcfg)
    doc = {"schema_version": io.SCHEMA_VERSION, **inf.to_dict()}
    io.write_json(a.out, doc)
    man.write(_manifest_path(Path(a.out)))
    return EXIT_OK


def cmd_cv(a):
    d, g = io.load_dataset(a.regions, a.covariates, a.edges)
    grid, k, seed = _grid(a)
    scfg = _solver(a)
    man = io.RunManifest("cv", _inputs(a), {
        "gamma": grid.gamma_values, "tau": grid.tau_values, "fusion": grid.fusion_kind.value,
        "k": k, "metric": a.metric, "solver": scfg.to_dict(), "standardize": a.standardize},
        seed)
    dd, c, s = standardize(d) if a.standardize else (d, None, None)
    plan = make_folds(g, k, seed)
    gamma, tau, scores = tune(dd, g, grid, scfg, plan, a.metric, n_jobs=a.threads)
    res = fit(dd, g, grid.config(gamma, tau), scfg)
    if a.standardize:
        res.theta_hat = to_original_scale(res.theta_hat, c, s)
    doc = io.fit_to_dict(res, a.standardize)
    doc["selected"] = {"gamma": gamma, "tau": tau}
    doc["cv_scores"] = [{"gamma": gm, "tau": t, "score": v} for (gm, t), v in scores.items()]
    doc["folds"] = {"k": k, "seed": seed, "metric": a.metric}
    io.write_json(a.out, doc)
    man.write(_manifest_path(Path(a.out)))
    return EXIT_OK


def cmd_predict(a):
    d, g, _ = io.load_dataset(a.regions, a.covariates, a.edges, allow_missing_counts=True)
    doc = io.read_json(a.fit)
    fitted = {str(r): i for i, r in enumerate(doc.get("region_ids", []))}
    alpha_fit = np.asarray(doc.get("alpha", []), dtype=float)
    beta = np.asarray(doc.get("beta", []), dtype=float)
    if beta.size != d.p:
        raise DataError(f"fit has {beta.size} coefficients, data has {d.p} covariates")
    train = np.array([i for i, r in enumerate(d.region_ids) if str(r) in fitted], dtype=int)
    if train.size == 0:
        raise DataError("none of the fitted regions appear in the extended graph")
    unknown = set(fitted) - {str(r) for r in d.region_ids}
    if unknown:
        raise DataError(f"fitted region {sorted(unknown)[0]!r} is absent from the extended graph")
    man = io.RunManifest("predict", _inputs(a) | {"fit": a.fit}, {"delta": a.delta})
    alpha = np.empty(d.n)
    alpha[train] = alpha_fit[[fitted[str(d.region_ids[i])] for i in train]]
    test = np.setdiff1d(np.arange(d.n), train)
    if test.size:
        alpha[test] = cohesion_predict(laplacian(g, a.delta), train, alpha[train])
    mu = _mean(d, linear_predictor(d, alpha, beta))
    heldout = np.zeros(d.n, dtype=bool)
    heldout[test] = True
    io.write_csv(a.out, ["region_id", "alpha_hat", "mu_hat", "held_out"],
                 ([d.region_ids[i], float(alpha[i]), float(mu[i]), int(heldout[i])]
                  for i in range(d.n)))
    man.write(_manifest_path(Path(a.out)))
    return EXIT_OK


def cmd_bench(a):
    if a.replicates < 1:
        raise DataError("bench needs at least one replicate")
    sc = _scenario(a)
    grid, k, _ = _grid(a)
    dcfg = DebiasConfig(eta=a.eta, covariance_kind=a.covariance, level=a.level, force=True)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    man = io.RunManifest("bench", {"scenario": a.scenario, "grid": a.grid}, {
        "scenario": sc.to_dict(), "replicates": a.replicates, "gamma": grid.gamma_values,
        "tau": grid.tau_values, "fusion": grid.fusion_kind.value, "k": k,
        "covariance_kind": dcfg.covariance_kind.value, "level": dcfg.level}, a.seed)
    metrics, outcomes = run_bench(sc, a.replicates, grid, SolverConfig(warm_step=True), dcfg,
                                  k, a.threads, a.seed)
    io.write_csv(out / "summary.csv",
                 ["m", "p", "n_replicates", "coverage", "type_i_error", "power",
                  "median_l1_error"],
                 [[sc.m, sc.p, metrics["n_replicates"], metrics["coverage"],
                   metrics["type_i_error"], metrics["power"],
                   float(np.median(metrics["l1_error"]))]])
    q = metrics["error_quantiles"]
    io.write_csv(out / "coefficients.csv",
                 ["coef", "beta_true", "coverage", "rejection_rate", "bias",
                  "q025", "q25", "q50", "q75", "q975"],
                 [[f"x{j + 1}", float(sc.beta[j]), float(metrics["coverage_by_coef"][j]),
                   float(metrics["rejection_by_coef"][j]), float(metrics["bias"][j]),
                   *(float(v) for v in q[:, j])] for j in range(sc.p)])
    io.write_csv(out / "replicates.csv",
                 ["rep_seed", "gamma", "tau", "iterations", "converged", "eta_used",
                  *(f"b_hat_{j + 1}" for j in range(sc.p)),
                  *(f"se_{j + 1}" for j in range(sc.p))],
                 [[o.rep_seed, float(o.gamma), float(o.tau), o.fit.iterations,
                   int(o.fit.converged), float(o.inference.eta_used),
                   *(float(v) for v in o.inference.b_hat),
                   *(float(v) for v in o.inference.std_error)] for o in outcomes])
    man.write(out / "manifest.json")
    return EXIT_OK


def _inputs(a):
    return {"regions": a.regions, "covariates": a.covariates, "edges": a.edges}


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "infer": cmd_infer, "cv": cmd_cv,
            "predict": cmd_predict, "bench": cmd_bench}


def run(argv=None) -> int:
    """Parse ``argv`` and dispatch; returns the process exit code."""
    try:
        a = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"spatial-pmle: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", under="ignore"):
            return COMMANDS[a.command](a)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"spatial-pmle: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as exc:
        print(f"spatial-pmle: error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
