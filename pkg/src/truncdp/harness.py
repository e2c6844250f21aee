"""Experiment CLI: data generation, estimation runs, sweeps, audits, CSV reports.

Subcommands:

    gen              write a synthetic dataset (ground truth recorded separately)
    estimate-mean    run the private mean pipeline on a dataset file
    estimate-cov     run the private covariance pipeline
    estimate-expfam  run the generic pipeline with a named family
    sweep            grid over n with repeated trials, CSV rows + summary tables
    audit            gradient-bound / neighboring / sigma-formula checks
    report           aggregate a sweep CSV into summary tables

Configuration is a flat key=value file (unknown keys are errors); the flags
--config, --seed, --out, --trials, --test-mode override it. Exit codes:
0 success, 2 config error, 3 over budget, 4 rejection-cap or conditioning
failure. TRUNCDP_THREADS caps parallel sweep trials; --test-mode (noise off)
only runs when TRUNCDP_DEBUG=1.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import statistics
import sys
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields as dataclass_fields
from typing import Optional

import numpy as np

from .errors import (
    ConditioningError,
    ConfigError,
    InsufficientDataError,
    OverBudgetError,
    RejectionCapExceeded,
    TruncDPError,
)
from .estimator import C_STEP, Prior, SGDConfig, dpsgd_truncated
from .expfam import gaussian_mean_family
from .gaussian import estimate_covariance, estimate_mean, inv_sqrt, plan_mean
from .privacy import (
    PrivacyBudget,
    gaussian_mechanism,
    gaussian_sigma,
    sgd_noise_sigma,
)
from .truncation import (
    DataBall,
    UserPredicate,
    make_sgd_survival_set,
    preprocess,
    raw_rows_for,
)

DEFAULT_GRID = tuple(2**k for k in range(3, 12))


# ------------------------------------------------------------- config


def _cast_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in {"1", "true", "yes", "on"}:
        return True
    if low in {"0", "false", "no", "off"}:
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _cast_ints(text: str):
    return tuple(int(tok) for tok in text.replace(",", " ").split())


def _cast_floats(text: str):
    return tuple(float(tok) for tok in text.replace(",", " ").split())


@dataclass
class RunConfig:
    """One experiment definition, parsed from a flat key=value file."""

    task: str = "mean"
    d: int = 2
    n: Optional[int] = None
    n_grid: Optional[tuple] = None
    epsilon: float = 1.0
    delta: float = 1e-6
    alpha: float = 0.25
    beta: float = 0.1
    rho: float = 0.5
    seed: int = 0
    trials: int = 1
    out: Optional[str] = None
    data: Optional[str] = None
    truth: Optional[str] = None
    csv: Optional[str] = None
    family: str = "gauss_mean"
    lam: float = 0.5
    big_lam: float = 1.0
    prior_radius: float = 4.0
    sgd_rows: Optional[int] = None
    theta_star: Optional[tuple] = None
    sigma_eigs: Optional[tuple] = None
    test_mode: bool = False

    @property
    def budget(self) -> PrivacyBudget:
        return PrivacyBudget(self.epsilon, self.delta)

    def validate(self, command: str) -> None:
        if self.task not in {"mean", "cov", "expfam"}:
            raise ConfigError(f"unknown task {self.task!r}")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if command in {"estimate", "sweep", "audit"}:
            if self.epsilon <= 0:
                raise ConfigError("epsilon must be positive")
            if not 0.0 < self.delta < 1.0:
                raise ConfigError("delta must lie in (0, 1)")
            if self.alpha <= 0:
                raise ConfigError("alpha must be positive")
            if not 0.0 < self.beta < 1.0:
                raise ConfigError("beta must lie in (0, 1)")
            if not 0.0 < self.rho < 1.0:
                raise ConfigError("rho must lie in (0, 1) for estimation")
        if self.task == "cov" and not 0.0 < self.lam <= self.big_lam:
            raise ConfigError("need 0 < lam <= big_lam")
        if self.n is not None and self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.n_grid is not None and any(v < 1 for v in self.n_grid):
            raise ConfigError("n_grid entries must be >= 1")
        if self.test_mode and os.environ.get("TRUNCDP_DEBUG") != "1":
            raise ConfigError(
                "test-mode (noise off) requires TRUNCDP_DEBUG=1; refusing"
            )

    def to_text(self) -> str:
        """Inverse of parse_config for all non-default fields."""
        lines = []
        for f in dataclass_fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(repr(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


_CASTERS = {
    "task": str,
    "d": int,
    "n": int,
    "n_grid": _cast_ints,
    "epsilon": float,
    "delta": float,
    "alpha": float,
    "beta": float,
    "rho": float,
    "seed": int,
    "trials": int,
    "out": str,
    "data": str,
    "truth": str,
    "csv": str,
    "family": str,
    "lam": float,
    "big_lam": float,
    "prior_radius": float,
    "sgd_rows": int,
    "theta_star": _cast_floats,
    "sigma_eigs": _cast_floats,
    "test_mode": _cast_bool,
}


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _CASTERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _CASTERS[key](value))
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


# --------------------------------------------------------- dataset io


def write_dataset(path: str, data, seed: int) -> None:
    """One sample per line, whitespace-separated, with a `# d= n= seed=` header."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# d={data.shape[1]} n={data.shape[0]} seed={seed}\n")
        np.savetxt(fh, data, fmt="%.17g")


def read_dataset(path: str):
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from exc
    with fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ConfigError(f"{path}: missing `# d= n= seed=` header")
        meta = {}
        for tok in header[1:].split():
            if "=" in tok:
                key, _, val = tok.partition("=")
                meta[key] = int(val)
        data = np.loadtxt(fh, ndmin=2)
    if "d" in meta and data.shape[1] != meta["d"]:
        raise ConfigError(f"{path}: header says d={meta['d']}, rows have {data.shape[1]}")
    if "n" in meta and data.shape[0] != meta["n"]:
        raise ConfigError(f"{path}: header says n={meta['n']}, file has {data.shape[0]}")
    return data, meta


def write_truth(path: str, task: str, value) -> None:
    value = np.atleast_2d(np.asarray(value, dtype=float))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# task={task} d={value.shape[1]}\n")
        np.savetxt(fh, value, fmt="%.17g")


def read_truth(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ConfigError(f"{path}: missing truth header")
        task = ""
        for tok in header[1:].split():
            if tok.startswith("task="):
                task = tok[5:]
        value = np.loadtxt(fh, ndmin=2)
    return task, value


# ------------------------------------------------------------ metrics


def mean_error(mu_hat, theta_star) -> float:
    return float(np.linalg.norm(np.asarray(mu_hat, float).ravel()
                                - np.asarray(theta_star, float).ravel()))


def cov_error(sigma_hat, sigma_star) -> float:
    """Relative Frobenius error ||I - S*^{-1/2} S_hat S*^{-1/2}||_F."""
    w = inv_sqrt(np.asarray(sigma_star, dtype=float))
    inner = w @ np.asarray(sigma_hat, dtype=float) @ w
    d = inner.shape[0]
    return float(np.linalg.norm(np.eye(d) - inner))


# ---------------------------------------------------------------- gen


def run_gen(cfg: RunConfig) -> int:
    if cfg.out is None:
        raise ConfigError("gen needs out=<path>")
    if cfg.n is None:
        raise ConfigError("gen needs n=<rows>")
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    if cfg.task in {"mean", "expfam"}:
        theta = np.zeros(cfg.d) if cfg.theta_star is None else np.asarray(cfg.theta_star, float)
        if theta.shape != (cfg.d,):
            raise ConfigError("theta_star length must equal d")
        data = rng.standard_normal((cfg.n, cfg.d)) + theta
        truth = theta[None, :]
    elif cfg.task == "cov":
        eigs = np.ones(cfg.d) if cfg.sigma_eigs is None else np.asarray(cfg.sigma_eigs, float)
        if eigs.shape != (cfg.d,) or np.any(eigs <= 0):
            raise ConfigError("sigma_eigs must be d positive reals")
        data = rng.standard_normal((cfg.n, cfg.d)) * np.sqrt(eigs)[None, :]
        truth = np.diag(eigs)
    else:
        raise ConfigError(f"gen does not support task {cfg.task!r}")
    write_dataset(cfg.out, data, cfg.seed)
    write_truth(cfg.out + ".truth", cfg.task, truth)
    print(f"wrote {cfg.n} x {cfg.d} {cfg.task} dataset to {cfg.out} "
          f"(truth in {cfg.out}.truth)")
    return 0


# ----------------------------------------------------------- estimate


def _find_truth(cfg: RunConfig):
    path = cfg.truth
    if path is None and cfg.data is not None and os.path.exists(cfg.data + ".truth"):
        path = cfg.data + ".truth"
    if path is None:
        return None
    return read_truth(path)


def run_estimate(cfg: RunConfig, task: str) -> int:
    if cfg.data is None:
        raise ConfigError(f"estimate-{task} needs data=<path>")
    raw, _ = read_dataset(cfg.data)
    noise = not cfg.test_mode
    if task in {"mean", "expfam"}:
        if task == "expfam" and cfg.family != "gauss_mean":
            raise ConfigError(f"unknown family {cfg.family!r}")
        report = estimate_mean(
            raw, cfg.budget, cfg.alpha, cfg.beta, cfg.seed, rho=cfg.rho,
            noise=noise, sgd_rows=cfg.sgd_rows, full_report=True,
        )
        if task == "expfam":
            report.task = "expfam:gauss_mean"
    elif task == "cov":
        report = estimate_covariance(
            raw, cfg.budget, cfg.alpha, cfg.beta, cfg.lam, cfg.big_lam,
            cfg.seed, rho=cfg.rho, noise=noise, sgd_rows=cfg.sgd_rows,
            full_report=True,
        )
    else:
        raise ConfigError(f"unknown estimate task {task!r}")

    truth = _find_truth(cfg)
    if truth is not None:
        _, value = truth
        if task == "cov":
            report.error = cov_error(np.asarray(report.theta), value)
        else:
            report.error = mean_error(np.asarray(report.theta), value[0])
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json(canonical=True))
            fh.write("\n")
    err_text = "n/a" if report.error is None else f"{report.error:.6g}"
    print(
        f"task={report.task} d={cfg.d} n_raw={report.n_raw} "
        f"eps_spent={report.epsilon_spent:.6g}/{cfg.epsilon:.6g} "
        f"error={err_text} wall_ms={report.wall_ms:.1f}"
    )
    return 0


# -------------------------------------------------------------- sweep

CSV_COLUMNS = ("task", "d", "n", "epsilon", "delta", "alpha",
               "trial", "error", "success", "wall_ms", "seed")


def _thread_count() -> int:
    raw = os.environ.get("TRUNCDP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _sweep_trial(cfg: RunConfig, n: int, trial: int, seed_pair) -> dict:
    data_seed, est_seed = (int(v) for v in seed_pair)
    rng = np.random.default_rng(data_seed)
    direction = rng.standard_normal(cfg.d)
    direction /= max(np.linalg.norm(direction), 1e-12)
    radius = cfg.prior_radius * 0.9 * rng.uniform() ** (1.0 / cfg.d)
    theta_star = radius * direction
    prior = Prior(
        theta0=np.zeros(cfg.d),
        radius_param=cfg.prior_radius,
        radius_stat=cfg.prior_radius,
        tau0=np.zeros(cfg.d),
    )
    plan = plan_mean(cfg.d, cfg.budget, cfg.alpha, cfg.beta, rho=cfg.rho,
                     prior=prior, sgd_rows=n)
    raw = rng.standard_normal((plan.raw_needed, cfg.d)) + theta_star
    t0 = time.perf_counter()
    report = estimate_mean(
        raw, cfg.budget, cfg.alpha, cfg.beta, est_seed, rho=cfg.rho,
        prior=prior, noise=not cfg.test_mode, sgd_rows=n, full_report=True,
    )
    wall_ms = (time.perf_counter() - t0) * 1e3
    error = mean_error(report.theta, theta_star)
    return {
        "task": cfg.task, "d": cfg.d, "n": n,
        "epsilon": cfg.epsilon, "delta": cfg.delta, "alpha": cfg.alpha,
        "trial": trial, "error": error,
        "success": int(error <= cfg.alpha), "wall_ms": wall_ms,
        "seed": est_seed,
    }


def summarize_rows(rows):
    """Per-(task, d, n) success rate and median error, sorted by n."""
    groups = {}
    for row in rows:
        key = (row["task"], int(row["d"]), int(row["n"]))
        groups.setdefault(key, []).append(row)
    out = []
    for key in sorted(groups):
        bucket = groups[key]
        out.append({
            "task": key[0], "d": key[1], "n": key[2],
            "trials": len(bucket),
            "success_rate": sum(r["success"] for r in bucket) / len(bucket),
            "median_error": statistics.median(r["error"] for r in bucket),
            "median_wall_ms": statistics.median(r["wall_ms"] for r in bucket),
        })
    return out


def _print_summary(summary) -> None:
    print(f"{'n':>8}  {'trials':>6}  {'success':>8}  {'median_err':>12}  {'wall_ms':>10}")
    for row in summary:
        print(f"{row['n']:>8}  {row['trials']:>6}  {row['success_rate']:>8.2f}  "
              f"{row['median_error']:>12.5g}  {row['median_wall_ms']:>10.1f}")


def run_sweep(cfg: RunConfig) -> int:
    if cfg.task not in {"mean", "expfam"}:
        raise ConfigError("sweep supports task=mean (gauss_mean family)")
    grid = cfg.n_grid or DEFAULT_GRID
    jobs = []
    children = np.random.SeedSequence(cfg.seed).spawn(len(grid) * cfg.trials)
    for i, n in enumerate(grid):
        for t in range(cfg.trials):
            child = children[i * cfg.trials + t]
            jobs.append((n, t, child.generate_state(2, dtype=np.uint64)))
    threads = _thread_count()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda j: _sweep_trial(cfg, *j), jobs))
    else:
        rows = [_sweep_trial(cfg, *job) for job in jobs]
    rows.sort(key=lambda r: (r["n"], r["trial"]))

    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {len(rows)} trial rows to {cfg.out}")
    _print_summary(summarize_rows(rows))
    return 0


# -------------------------------------------------------------- audit


def audit_gradient_bounds(d: int, n: int, rho: float, seed: int,
                          budget: Optional[PrivacyBudget] = None,
                          radius: float = 1.0) -> dict:
    """Full DP-SGD run on the Gaussian mean family; checks max ||g|| <= G."""
    family = gaussian_mean_family(d)
    budget = budget or PrivacyBudget(1.0, 1e-6)
    ss = np.random.SeedSequence(seed)
    data_seed, prep_seed, sgd_seed = (int(v) for v in ss.generate_state(3, dtype=np.uint64))
    tau0 = np.zeros(d)
    survival = make_sgd_survival_set(family, tau0, rho, radius)
    raw = np.random.default_rng(data_seed).standard_normal(
        (raw_rows_for(n, rho, 1e-6), d))
    data = preprocess(raw, survival, n, tau0, prep_seed)
    sgd = SGDConfig(n=n, theta0=tau0, tau0=tau0, radius=radius, rho=rho,
                    lam_step=C_STEP, seed=sgd_seed)
    result = dpsgd_truncated(family, data, budget, sgd)
    bound = result.grad_bound
    return {
        "name": "gradient-bound",
        "max_grad": result.max_grad_norm,
        "bound": bound,
        "iterations": result.iterations,
        "ok": result.max_grad_norm <= bound + 1e-9,
    }


def audit_preprocess_exhaustive(seed: int = 0) -> dict:
    """All single-row edits of a 6-point dataset x 3 survival configurations.

    Neighboring inputs must produce output multisets differing in at most
    one element (the swap cases: both rows survive, one survives, neither).
    """
    base = np.array([[-2.0], [-0.5], [0.3], [0.8], [1.7], [3.1]])
    configs = [
        (DataBall(1.0), np.array([0.0])),
        (DataBall(2.0, center=np.array([0.5])), np.array([0.5])),
        (UserPredicate(lambda x: float(x[0]) >= 0.0,
                       batch_fn=lambda X: X[:, 0] >= 0.0), np.array([1.0])),
    ]
    replacements = [-3.5, -0.9, 0.1, 0.6, 2.4, 9.0]
    n_keep = 4
    cases = 0
    worst = 0
    violations = 0
    for survival, dummy in configs:
        ref = preprocess(base, survival, n_keep, dummy, seed)
        ref_counts = Counter(map(tuple, np.asarray(ref.points)))
        for i in range(base.shape[0]):
            for value in replacements:
                neighbor = base.copy()
                neighbor[i, 0] = value
                out = preprocess(neighbor, survival, n_keep, dummy, seed)
                counts = Counter(map(tuple, np.asarray(out.points)))
                added = sum((counts - ref_counts).values())
                removed = sum((ref_counts - counts).values())
                diff = max(added, removed)
                cases += 1
                worst = max(worst, diff)
                if diff > 1:
                    violations += 1
    return {"name": "neighboring", "cases": cases, "max_diff": worst,
            "violations": violations, "ok": violations == 0}


def audit_sigma_formulas(budget: PrivacyBudget, n: int = 1000) -> dict:
    """Mechanism sigmas must equal their closed forms to machine precision."""
    rng = np.random.default_rng(0)
    checks = []
    for sens in (1.0, 0.25, 3.0):
        _, sigma = gaussian_mechanism(np.zeros(2), sens, budget, rng)
        expect = 2.0 * sens * math.log(1.25 / budget.delta) / budget.epsilon
        checks.append(("gaussian", sens, sigma, expect, sigma == expect))
    for sens in (1.0, 0.5):
        sigma = sgd_noise_sigma(sens, n, budget)
        expect = math.sqrt(
            32.0 * sens * sens * math.log(n / budget.delta)
            * math.log(1.0 / budget.delta)
        ) / budget.epsilon
        checks.append(("sgd", sens, sigma, expect, sigma == expect))
    direct = gaussian_sigma(2.0, budget)
    checks.append(("gaussian", 2.0, direct,
                   2.0 * 2.0 * math.log(1.25 / budget.delta) / budget.epsilon,
                   direct == 2.0 * 2.0 * math.log(1.25 / budget.delta) / budget.epsilon))
    return {"name": "sigma-formulas", "checks": len(checks),
            "ok": all(c[4] for c in checks),
            "detail": [(c[0], c[1]) for c in checks if not c[4]]}


def run_audit(cfg: RunConfig) -> int:
    n = cfg.n or 1000
    results = [
        audit_gradient_bounds(cfg.d, n, cfg.rho, cfg.seed, cfg.budget),
        audit_preprocess_exhaustive(cfg.seed),
        audit_sigma_formulas(cfg.budget, n),
    ]
    ok = True
    for res in results:
        status = "PASS" if res["ok"] else "FAIL"
        ok = ok and res["ok"]
        detail = {k: v for k, v in res.items() if k not in {"name", "ok"}}
        body = " ".join(f"{k}={v}" for k, v in detail.items())
        print(f"audit {res['name']}: {status} ({body})")
    return 0 if ok else 1


# ------------------------------------------------------------- report


def run_report(cfg: RunConfig) -> int:
    path = cfg.csv or cfg.out
    if path is None:
        raise ConfigError("report needs csv=<path> (or --out)")
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            rows = []
            for row in reader:
                rows.append({
                    "task": row["task"], "d": int(row["d"]), "n": int(row["n"]),
                    "error": float(row["error"]),
                    "success": int(row["success"]),
                    "wall_ms": float(row["wall_ms"]),
                })
    except OSError as exc:
        raise ConfigError(f"cannot read csv {path}: {exc}") from exc
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: not a sweep CSV: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    _print_summary(summarize_rows(rows))
    return 0


# ---------------------------------------------------------------- cli


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="truncdp",
        description="DP estimation on truncated samples: experiments and audits.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("gen", "write a synthetic dataset"),
        ("estimate-mean", "run the private mean pipeline"),
        ("estimate-cov", "run the private covariance pipeline"),
        ("estimate-expfam", "run the generic pipeline with family="),
        ("sweep", "grid over n with repeated trials"),
        ("audit", "gradient / neighboring / sigma audits"),
        ("report", "summarize a sweep CSV"),
    ]:
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="flat key=value experiment file")
        sp.add_argument("--seed", type=int, help="master seed override")
        sp.add_argument("--out", help="output path override")
        sp.add_argument("--trials", type=int, help="trials per grid point")
        sp.add_argument("--test-mode", action="store_true",
                        help="disable noise (needs TRUNCDP_DEBUG=1)")
    return parser


def _dispatch(args: argparse.Namespace) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.trials is not None:
        cfg.trials = args.trials
    if args.test_mode:
        cfg.test_mode = True

    command = args.command
    if command == "gen":
        cfg.validate("gen")
        return run_gen(cfg)
    if command.startswith("estimate-"):
        task = command[len("estimate-"):]
        cfg.task = {"mean": "mean", "cov": "cov", "expfam": "expfam"}[task]
        cfg.validate("estimate")
        return run_estimate(cfg, task)
    if command == "sweep":
        cfg.validate("sweep")
        return run_sweep(cfg)
    if command == "audit":
        cfg.validate("audit")
        return run_audit(cfg)
    if command == "report":
        cfg.validate("report")
        return run_report(cfg)
    raise ConfigError(f"unknown command {command!r}")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except InsufficientDataError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OverBudgetError as exc:
        print(f"over budget: {exc}", file=sys.stderr)
        return 3
    except (RejectionCapExceeded, ConditioningError) as exc:
        print(f"sampling failure: {exc}", file=sys.stderr)
        return 4
    except TruncDPError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
