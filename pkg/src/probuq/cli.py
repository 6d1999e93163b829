"""Command-line entry point: ``probuq run | validate | diagnose``.

Exit codes: 0 success, 1 unexpected internal error, 2 configuration or
input error, 3 model failure, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import math
import os
import sys
import time
import traceback
from collections import Counter
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import dgp as dgp_mod
from . import gp as gp_mod
from . import mogp as mogp_mod
from .bayes import (
    CalibrationTarget,
    ExperimentalDataset,
    LikelihoodSpec,
    posterior_predictive,
)
from .config import RunConfig, load_config
from .diagnostics import diagnose_files
from .errors import (
    ConfigError,
    ModelEvaluationError,
    NumericalError,
    ProbUQError,
    SurrogateFileError,
)
from .harness import SCHEMA_VERSION, BatchFunction, JsonlReporter, write_summary
from .learner import (
    ActiveLearningConfig,
    posterior_summary,
    run_bayesian_active_learning,
    run_bayesian_optimization,
    run_model_mcmc,
    run_surrogate_mcmc,
)
from .numerics import rng_stream
from .pca import fit_pca, from_latent, load_snapshots, relative_l2_error, to_latent
from .samplers.forward import adaptive_importance_sampling, latin_hypercube, monte_carlo
from .samplers.subset import active_learning_subset_simulation, subset_simulation
from .surrogate_io import load_any

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_CONFIG = 2
EXIT_MODEL = 3
EXIT_NUMERICAL = 4

OUTPUT_ENV = "PROBUQ_OUTPUT_DIR"
DEFAULT_OUTPUT = "probuq_output"

# ---------------------------------------------------------------- run context


class _Run:
    """Output directory, evaluation-record stream and per-run counters."""

    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.totals = Counter(requests=0, ok=0, failed=0, timeout=0)
        self._records = None
        self._open = []

    def batch_function(self, configuration=None) -> BatchFunction:
        if self._records is None:
            self._records = self.stream("records", "record")
        return BatchFunction(self.cfg.model.build(), self.cfg.max_concurrency, self.cfg.model.failure_policy,
                             configuration, recorder=self._record)

    def _record(self, records):
        self._records.write_records(records)
        self.totals["requests"] += len(records)
        for r in records:
            self.totals[r.status] += 1

    def stream(self, name: str, kind: str) -> JsonlReporter:
        rep = JsonlReporter(self.out / f"{name}.jsonl", kind, {"workflow": self.cfg.workflow})
        self._open.append(rep)
        return rep

    def write_csv(self, name: str, header, rows) -> Path:
        path = self.out / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return path

    def close(self):
        for rep in self._open:
            rep.close()

    def design(self, n: int, method: str, stream: int) -> np.ndarray:
        sampler = latin_hypercube if method == "lhs" else monte_carlo
        return sampler(n, self.cfg.priors(), rng_stream(self.cfg.seed, stream))

    def parameter_names(self) -> list:
        return [d.name or f"x{i}" for i, d in enumerate(self.cfg.distributions)]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _finite(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return np.isfinite(a) if a.ndim == 1 else np.all(np.isfinite(a), axis=1)


def _learner_config(cfg: RunConfig, default_lam: float) -> ActiveLearningConfig:
    L = cfg.learner
    lam = default_lam if cfg.acquisition.lam is None else cfg.acquisition.lam
    return ActiveLearningConfig(cfg.acquisition.kind, lam, L.batch_size, L.iterations, L.pool_size, L.warmup,
                                cfg.trainer.build(cfg.seed), L.convergence_tol, L.convergence_window, cfg.seed)


# ---------------------------------------------------------------- preflight (no outputs yet)


def _load_dataset(cfg: RunConfig) -> ExperimentalDataset:
    cal = cfg.calibration
    if cal.data is not None:
        try:
            return ExperimentalDataset.from_csv(cal.data, cal.observation_column)
        except OSError as exc:
            raise ConfigError(f"calibration.data: cannot read {cal.data}: {exc.strerror or exc}") from None
        except ValueError as exc:
            raise ConfigError(f"calibration.data: {exc}") from None
    obs = np.asarray(cal.observations, dtype=float)
    C = np.zeros((obs.size, 0)) if cal.configurations is None else np.asarray(cal.configurations, dtype=float)
    try:
        return ExperimentalDataset(C.reshape(obs.size, -1), obs)
    except ValueError as exc:
        raise ConfigError(f"calibration: {exc}") from None


def _read_points(path) -> tuple[list, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r]
        header = [h.strip() for h in rows[0]]
        X = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    except (OSError, IndexError, ValueError) as exc:
        raise ConfigError(f"predict.inputs: cannot read points from {path}: {exc}") from None
    return header, X


def _preflight(cfg: RunConfig) -> dict:
    """Load every input file so that bad inputs fail before anything is written."""
    inputs = {}
    if cfg.workflow == "inverse_uq":
        inputs["data"] = _load_dataset(cfg)
        try:
            LikelihoodSpec(cfg.calibration.likelihood.family, cfg.calibration.likelihood.lower,
                           cfg.calibration.likelihood.upper)
        except ValueError as exc:
            raise ConfigError(f"calibration.likelihood: {exc}") from None
    if cfg.workflow == "predict":
        try:
            inputs["surrogate"] = load_any(cfg.predict.surrogate)
        except (OSError, SurrogateFileError) as exc:
            raise ConfigError(f"predict.surrogate: {exc}") from None
        inputs["header"], inputs["points"] = _read_points(cfg.predict.inputs)
    if cfg.workflow == "pca" and cfg.pca.snapshots is not None:
        try:
            inputs["snapshots"] = load_snapshots(cfg.pca.snapshots)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"pca.snapshots: {exc}") from None
    return inputs


# ---------------------------------------------------------------- workflows


def _wf_bayesian_optimization(run: _Run, inputs: dict) -> dict:
    cfg = run.cfg
    res = run_bayesian_optimization(run.batch_function(), cfg.priors(),
                                    _learner_config(cfg, 0.0))
    names = run.parameter_names()
    with run.stream("history", "evaluation") as rep:
        for h in res.history:
            rep.write(h)
    run.write_csv("history", ["iteration", *names, "y"],
                  [[h["iteration"], *h["x"], h["y"]] for h in res.history])
    return {
        "best_point": dict(zip(names, res.best_point.tolist())),
        "best_value": res.best_value,
        "n_evaluations": len(res.history),
        "n_failed": int(np.sum(~np.isfinite(res.y))),
    }


def _chain_callback(rep: JsonlReporter):
    last = [None]

    def cb(state):
        prev = last[0] if last[0] is not None else np.zeros_like(state.acceptance_counts)
        rep.write({
            "iteration": int(state.iteration),
            "positions": state.positions.tolist(),
            "log_posteriors": [float(v) if math.isfinite(v) else str(v) for v in state.log_posteriors],
            "accepted": (state.acceptance_counts - prev > 0).tolist(),
        })
        last[0] = state.acceptance_counts.copy()

    return cb


def _wf_inverse_uq(run: _Run, inputs: dict) -> dict:
    cfg, cal, mc = run.cfg, run.cfg.calibration, run.cfg.mcmc
    data = inputs["data"]
    f = run.batch_function()
    spec = LikelihoodSpec(cal.likelihood.family, cal.likelihood.lower, cal.likelihood.upper)
    sigma_prior = cal.sigma_prior.build() if cal.sigma_prior is not None else None
    target = CalibrationTarget(f.calibration_outputs, data, cfg.priors(), spec, sigma_prior, cal.fixed_sigma)
    names = run.parameter_names() + ([] if cal.fixed_sigma is not None else ["log_sigma_eps"])
    callback = _chain_callback(run.stream("chain", "iteration")) if mc.trace else None
    results = {"method": cal.method}
    if cal.method == "direct":
        chain = run_model_mcmc(target, mc.kind, mc.chains, mc.steps, cfg.seed, callback=callback,
                               **mc.sampler_kwargs())
    else:
        bal = run_bayesian_active_learning(target, _learner_config(cfg, 1.0),
                                           save_path=run.out / "surrogate.bin")
        run.write_csv("convergence", ["iteration", "max_log_acquisition", "smoothed"],
                      [[i + 1, a, b] for i, (a, b) in enumerate(zip(bal.convergence, bal.smoothed_convergence))])
        results["active_learning"] = {
            "training_points": int(bal.X.shape[0]),
            "converged": bal.converged,
            "final_metric": bal.convergence[-1] if bal.convergence else None,
            "surrogate": "surrogate.bin",
        }
        chain = run_surrogate_mcmc(bal.surrogate, target, mc.kind, mc.chains, mc.steps, cfg.seed,
                                   callback=callback, **mc.sampler_kwargs())
    summary = posterior_summary(chain, mc.burn_in)
    flat = chain.flat(mc.burn_in)
    run.write_csv("posterior_samples", names, flat.tolist())
    results["posterior"] = {
        name: {
            "mean": float(summary["mean"][i]),
            "std": float(summary["std"][i]),
            "mcse": float(summary["mcse"][i]),
            "rhat": float(summary["rhat"][i]),
        }
        for i, name in enumerate(names)
    }
    results["acceptance_rate"] = chain.acceptance_rate
    results["model_calls"] = target.model_calls
    results["failed_parameter_points"] = target.failed_calls
    if cal.predictive is not None:
        idx = np.unique(np.linspace(0, flat.shape[0] - 1, min(cal.predictive.draws, flat.shape[0])).astype(int))
        draws = flat[idx]
        thetas = np.array([target.split(p)[0] for p in draws])
        sigmas = np.array([target.split(p)[1] for p in draws])

        def evaluator(config, theta):
            return f(theta[None, :], [config])[0]

        pp = posterior_predictive(thetas, sigmas, cal.predictive.configuration, evaluator,
                                  rng_stream(cfg.seed, 4), spec)
        run.write_csv("posterior_predictive", ["value"], [[v] for v in pp["samples"]])
        results["predictive"] = {k: pp[k] for k in ("n_draws", "n_failed", "failure_fraction", "median")}
        results["predictive"]["quantiles"] = {str(q): v for q, v in pp["quantiles"].items()}
    return results


def _wf_subset_simulation(run: _Run, inputs: dict) -> dict:
    cfg, s = run.cfg, run.cfg.subset
    f = run.batch_function()
    common = dict(p0=s.p0, threshold=s.threshold, max_subsets=s.max_subsets, n_chains=s.chains,
                  rng=rng_stream(cfg.seed, 0), sense=s.sense, proposal_std=s.proposal_std)
    if s.active_learning:
        res = active_learning_subset_simulation(f, cfg.priors(), s.n_per_subset, u_threshold=s.u_threshold,
                                                n_warmup=s.n_warmup, **common)
    else:
        res = subset_simulation(f, cfg.priors(), s.n_per_subset, **common)
    with run.stream("subsets", "subset") as rep:
        for st in res.trace:
            rep.write({"subset_index": st.subset_index, "threshold": st.threshold,
                       "acceptance_rate": None if math.isnan(st.acceptance_rate) else st.acceptance_rate,
                       "chains": st.chains})
    run.write_csv("levels", ["subset", "level"], list(enumerate(res.levels)))
    return {
        "failure_probability": res.failure_probability,
        "cov": res.cov,
        "levels": list(res.levels),
        "subsets": len(res.trace),
        "model_calls": res.model_calls,
        "surrogate_calls": res.surrogate_calls,
        "converged": res.converged,
        "active_learning": s.active_learning,
    }


def _wf_importance_sampling(run: _Run, inputs: dict) -> dict:
    cfg, s = run.cfg, run.cfg.importance
    res = adaptive_importance_sampling(run.batch_function(), cfg.priors(), s.n_adapt, s.n_estimate,
                                       rng_stream(cfg.seed, 0), threshold=s.threshold, sense=s.sense,
                                       proposal_scale=s.proposal_scale)
    return {
        "failure_probability": res.failure_probability,
        "cov": res.cov,
        "std_error": res.estimate.std_error,
        "effective_sample_size": res.estimate.effective_sample_size,
        "model_calls": res.model_calls,
        "importance_means": res.density.means.tolist(),
    }


def _wf_forward_uq(run: _Run, inputs: dict) -> dict:
    cfg, s = run.cfg, run.cfg.forward
    X = run.design(s.samples, s.method, 0)
    Y = np.asarray(run.batch_function()(X), dtype=float)
    Y2 = Y.reshape(Y.shape[0], -1)
    ok = _finite(Y2)
    good = Y2[ok]
    names = run.parameter_names()
    outs = [f"y{j}" for j in range(Y2.shape[1])]
    run.write_csv("samples", names + outs, np.hstack([X, Y2]).tolist())
    stats = {}
    for j, name in enumerate(outs):
        col = good[:, j]
        stats[name] = {
            "mean": float(col.mean()) if col.size else math.nan,
            "std": float(col.std(ddof=1)) if col.size > 1 else math.nan,
            "quantiles": {str(q): float(np.quantile(col, q)) if col.size else math.nan for q in s.quantiles},
        }
    return {"n_samples": int(X.shape[0]), "n_failed": int((~ok).sum()), "outputs": stats}


def _train_surrogate(run: _Run, X, Y):
    cfg, s = run.cfg, run.cfg.surrogate
    trainer = cfg.trainer.build(cfg.seed)
    if s.kind == "gp":
        return gp_mod.train_gp(X, Y.reshape(-1), trainer, rng=rng_stream(cfg.seed, 1))
    if s.kind == "mogp":
        return mogp_mod.train_mogp(X, Y.reshape(Y.shape[0], -1), s.Q, s.R, trainer, rng=rng_stream(cfg.seed, 1))
    dcfg = dgp_mod.DgpMcmcConfig(samples=s.dgp_samples, burn_in=s.dgp_burn_in, thinning=s.dgp_thinning,
                                 hidden_nodes=s.hidden_nodes, seed=cfg.seed)
    return dgp_mod.train_dgp(X, Y.reshape(-1), dcfg, rng=rng_stream(cfg.seed, 1))


def _prediction_columns(pred, n):
    mean = np.asarray(pred.mean, dtype=float).reshape(n, -1)
    std = np.sqrt(np.asarray(pred.variance, dtype=float)).reshape(n, -1)
    return mean, std


def _wf_train_surrogate(run: _Run, inputs: dict) -> dict:
    from .diagnostics import uncertainty_metrics

    cfg, s = run.cfg, run.cfg.surrogate
    f = run.batch_function()
    X = run.design(s.training_samples, s.design, 0)
    Y = np.asarray(f(X), dtype=float)
    ok = _finite(Y)
    if not ok.any():
        raise ModelEvaluationError("every training evaluation failed")
    if s.kind in ("gp", "dgp") and Y.ndim != 1:
        raise ConfigError(f"surrogate.kind={s.kind} needs a scalar model output; use 'mogp'")
    model = _train_surrogate(run, X[ok], Y[ok])
    model.save(run.out / "surrogate.bin")
    results = {"kind": s.kind, "training_points": int(ok.sum()), "n_failed": int((~ok).sum()),
               "surrogate": "surrogate.bin"}
    if s.test_samples:
        Xt = monte_carlo(s.test_samples, cfg.priors(), rng_stream(cfg.seed, 2))
        Yt = np.asarray(f(Xt), dtype=float).reshape(s.test_samples, -1)
        okt = _finite(Yt)
        mean, std = _prediction_columns(model.predict(Xt[okt]), int(okt.sum()))
        truth = Yt[okt]
        rows_p, rows_t = [], []
        for i in range(truth.shape[0]):
            for j in range(truth.shape[1]):
                rows_p.append([i, j, mean[i, j], std[i, j]])
                rows_t.append([i, j, truth[i, j]])
        run.write_csv("predictions", ["index", "output", "mean", "std"], rows_p)
        run.write_csv("truth", ["index", "output", "truth"], rows_t)
        results["test_metrics"] = uncertainty_metrics(mean.ravel(), std.ravel(), truth.ravel())
    return results


def _wf_predict(run: _Run, inputs: dict) -> dict:
    model, header, X = inputs["surrogate"], inputs["header"], inputs["points"]
    mean, std = _prediction_columns(model.predict(X), X.shape[0])
    m = mean.shape[1]
    cols = ["mean", "std"] if m == 1 else [f"{k}_{j}" for j in range(m) for k in ("mean", "std")]
    rows = [list(x) + [v for j in range(m) for v in (mean[i, j], std[i, j])] for i, x in enumerate(X)]
    run.write_csv("predictions", header + cols, rows)
    return {"surrogate_kind": type(model).__name__, "n_points": int(X.shape[0]), "n_outputs": m}


def _wf_pca(run: _Run, inputs: dict) -> dict:
    cfg, p = run.cfg, run.cfg.pca
    X = None
    if "snapshots" in inputs:
        S = inputs["snapshots"]
    else:
        f = run.batch_function()
        X = run.design(p.training_samples, p.design, 0)
        Y = np.asarray(f(X), dtype=float)
        ok = _finite(Y)
        X, S = X[ok], Y[ok].reshape(int(ok.sum()), -1).T
    space = fit_pca(S, p.tau, p.centering)
    np.save(run.out / "basis.npy", space.basis)
    run.write_csv("singular_values", ["index", "singular_value"], list(enumerate(space.singular_values)))
    recon = from_latent(space, to_latent(space, S))
    results = {
        "rank": space.r,
        "n_features": space.n_features,
        "n_snapshots": int(S.shape[1]),
        "explained_fraction": space.explained_fraction,
        "training_reconstruction_error": float(np.mean(relative_l2_error(S, recon))),
        "basis": "basis.npy",
    }
    if p.fit_mogp:
        C = to_latent(space, S).T
        s = cfg.surrogate
        model = mogp_mod.train_mogp(X, C, s.Q, s.R, cfg.trainer.build(cfg.seed), rng=rng_stream(cfg.seed, 1))
        model.save(run.out / "surrogate.bin")
        results["surrogate"] = "surrogate.bin"
        if p.test_samples:
            Xt = monte_carlo(p.test_samples, cfg.priors(), rng_stream(cfg.seed, 2))
            Yt = np.asarray(f(Xt), dtype=float)
            okt = _finite(Yt)
            St = Yt[okt].reshape(int(okt.sum()), -1).T
            Ct = np.asarray(model.predict(Xt[okt]).mean).reshape(int(okt.sum()), -1).T
            err = relative_l2_error(St, from_latent(space, Ct))
            results["test_relative_l2_error"] = {"mean": float(err.mean()), "max": float(err.max()),
                                                 "n": int(err.size)}
    return results


WORKFLOW_RUNNERS = {
    "bayesian_optimization": _wf_bayesian_optimization,
    "inverse_uq": _wf_inverse_uq,
    "subset_simulation": _wf_subset_simulation,
    "importance_sampling": _wf_importance_sampling,
    "forward_uq": _wf_forward_uq,
    "train_surrogate": _wf_train_surrogate,
    "predict": _wf_predict,
    "pca": _wf_pca,
}


# ---------------------------------------------------------------- commands


def _output_dir(cfg: RunConfig, flag: str | None) -> Path:
    return Path(flag or os.environ.get(OUTPUT_ENV) or cfg.output_dir or DEFAULT_OUTPUT)


def _overrides(args) -> list:
    sets = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        sets.append(f"seed={args.seed}")
    if getattr(args, "max_concurrency", None) is not None:
        sets.append(f"max_concurrency={args.max_concurrency}")
    return sets


def execute(cfg: RunConfig, out: Path) -> Path:
    """Run a validated configuration and write its summary; returns the summary path."""
    inputs = _preflight(cfg)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    run = _Run(cfg, out)
    try:
        results = WORKFLOW_RUNNERS[cfg.workflow](run, inputs)
    finally:
        run.close()
    return write_summary(out / "summary.json", cfg.effective(), cfg.seed, dict(run.totals), results,
                         {"started": started, "wall_time_s": time.perf_counter() - t0, "output_dir": str(out),
                          "version": __version__})


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    path = execute(cfg, _output_dir(cfg, args.out))
    print(str(path))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = load_config(args.config, list(args.set or []))
    print("OK")
    print(yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=False), end="")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    try:
        report, curve = diagnose_files(args.predictions, args.truth)
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "calibration_curve.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["expected", "observed"])
            w.writerows(zip(curve["expected"].tolist(), curve["observed"].tolist()))
        (out / "diagnostics.json").write_text(
            json.dumps({"schema_version": SCHEMA_VERSION, **report}, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="probuq", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"probuq {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="execute a workflow")
    r.add_argument("config")
    r.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry (dotted path)")
    r.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV}, then config, then ./{DEFAULT_OUTPUT})")
    r.add_argument("--seed", type=int)
    r.add_argument("--max-concurrency", type=int, dest="max_concurrency")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a configuration without running it")
    v.add_argument("config")
    v.add_argument("--set", action="append", metavar="KEY=VALUE")
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("diagnose", help="uncertainty metrics for mean/std predictions against truths")
    d.add_argument("predictions", help="CSV with 'mean' and 'std' columns")
    d.add_argument("truth", help="CSV with a 'truth' column (or a single column)")
    d.add_argument("--out", help="directory for diagnostics.json and calibration_curve.csv")
    d.set_defaults(func=cmd_diagnose)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ModelEvaluationError as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except NumericalError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ProbUQError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report, then map to the internal-error code
        if args.verbose:
            traceback.print_exc()
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
