"""Benchmark harness: ``bench run <config>`` and ``bench compare <config>``.

Config files are flat ``key = value`` text with ``#`` comments; see the
README for the list of keys.  Outputs are ``log.csv`` and ``summary.json``
(run) or one CSV per method plus ``combined.csv`` (compare).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import aipcnm, ipcnm, svrg
from .cubic_model import CubicModel, model_value, reference_solve
from .problem import (KINDS, SYNTH_MODELS, DatasetError, NonsmoothTerm, load_sparse_text,
                      make_cubic_regression, make_logistic,
                      reference_minimum, synth_stream)
from .runlog import RunLog
from .sampling import sample_hessian

logger = logging.getLogger("proxcubic.bench")

EXIT_OK, EXIT_CONFIG, EXIT_WARNING = 0, 2, 3
METHODS = ("ipcnm", "aipcnm", "prox_grad", "svrg_subsolver_bench")
CONSTANT_KEYS = ("L3", "D", "tau1", "gamma1", "tau2", "gamma2", "delta", "R")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    seed: int
    methods: List[str]
    out: Optional[str] = None
    problem: str = "synth"
    dataset_path: Optional[str] = None
    dataset_model: str = "logistic"
    synth_model: str = "logistic"
    n: int = 500
    d: int = 20
    feature_scale: float = 1.0
    cubic_weight: float = 1.0
    nonsmooth: str = "zero"
    lam: float = 0.0
    sigma2: float = 0.0
    box_lo: float = -1.0
    box_hi: float = 1.0
    mode: str = "convex"
    subsolver: str = "reference"
    T: int = 20
    exact_oracles: bool = False
    sub_tol_cap: Optional[float] = None
    reference_gap: bool = True
    record_wall_time: bool = False
    repair_constants: bool = False
    constants: Dict[str, float] = field(default_factory=dict)


_INT_KEYS = {"seed", "n", "d", "T"}
_FLOAT_KEYS = {"feature_scale", "cubic_weight", "lam", "sigma2", "box_lo", "box_hi",
               "sub_tol_cap"}
_BOOL_KEYS = {"exact_oracles", "reference_gap", "record_wall_time", "repair_constants"}
_STR_KEYS = {"out", "problem", "dataset_path", "dataset_model", "synth_model", "nonsmooth",
             "mode", "subsolver"}


def _parse_bool(key, text):
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {text!r}")


def parse_config(path, seed_override=None, out_override=None) -> ExperimentConfig:
    """Read and validate a config file; raises ConfigError on any problem."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    raw: Dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = key.strip(), value.strip()
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    base = os.path.dirname(os.path.abspath(path))
    values = {}
    constants = {}
    methods = None
    for key, value in raw.items():
        try:
            if key in ("method", "methods"):
                methods = [m.strip() for m in value.split(",") if m.strip()]
            elif key in CONSTANT_KEYS:
                constants[key] = float(value)
            elif key in _INT_KEYS:
                values[key] = int(value)
            elif key in _FLOAT_KEYS:
                values[key] = float(value)
            elif key in _BOOL_KEYS:
                values[key] = _parse_bool(key, value)
            elif key in _STR_KEYS:
                values[key] = value
            else:
                raise ConfigError(f"unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{key}: invalid value {value!r}") from None
    if seed_override is not None:
        values["seed"] = int(seed_override)
    if out_override is not None:
        values["out"] = out_override
    if "seed" not in values:
        raise ConfigError("seed is mandatory")
    if not methods:
        raise ConfigError("method is mandatory")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}; choose from {METHODS}")
    if values.get("dataset_path") and not os.path.isabs(values["dataset_path"]):
        values["dataset_path"] = os.path.join(base, values["dataset_path"])
    cfg = ExperimentConfig(methods=methods, constants=constants, **values)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig):
    if cfg.problem not in ("synth", "dataset"):
        raise ConfigError("problem must be 'synth' or 'dataset'")
    if cfg.problem == "dataset":
        if not cfg.dataset_path:
            raise ConfigError("dataset_path is required for problem = dataset")
        if not os.path.isfile(cfg.dataset_path):
            raise ConfigError(f"dataset not found: {cfg.dataset_path}")
        if cfg.dataset_model not in ("logistic", "cubic_regression"):
            raise ConfigError("dataset_model must be logistic or cubic_regression")
    elif cfg.synth_model not in SYNTH_MODELS:
        raise ConfigError(f"synth_model must be one of {SYNTH_MODELS}")
    if cfg.n < 1 or cfg.d < 1:
        raise ConfigError("n and d must be >= 1")
    if cfg.T < 0:
        raise ConfigError("T must be >= 0")
    if cfg.nonsmooth not in KINDS:
        raise ConfigError(f"nonsmooth must be one of {KINDS}")
    if cfg.mode not in ipcnm.MODES:
        raise ConfigError(f"mode must be one of {ipcnm.MODES}")
    if cfg.subsolver not in ipcnm.SUBSOLVERS:
        raise ConfigError(f"subsolver must be one of {ipcnm.SUBSOLVERS}")
    if cfg.out is None:
        raise ConfigError("an output directory is required (config 'out' or --out)")


def build_problem(cfg: ExperimentConfig):
    if cfg.nonsmooth == "zero":
        h = NonsmoothTerm.zero()
    elif cfg.nonsmooth == "l1":
        h = NonsmoothTerm.l1(cfg.lam)
    elif cfg.nonsmooth == "l2_squared":
        h = NonsmoothTerm.l2_squared(cfg.sigma2)
    elif cfg.nonsmooth == "l1_plus_l2":
        h = NonsmoothTerm.l1_plus_l2(cfg.lam, cfg.sigma2)
    else:
        h = NonsmoothTerm.box(cfg.box_lo, cfg.box_hi)
    overrides = dict(cfg.constants)
    if cfg.problem == "dataset":
        data, labels = load_sparse_text(cfg.dataset_path)
        if cfg.dataset_model == "logistic":
            return make_logistic(data, labels, h, **overrides)
        return make_cubic_regression(data.toarray(), labels, cfg.cubic_weight, h, **overrides)
    return synth_stream(cfg.seed, cfg.n, cfg.d, cfg.synth_model, h, cfg.feature_scale,
                        cfg.cubic_weight, **overrides)


def _prox_grad(problem, T, f_star, record_wall_time):
    """Full-gradient proximal gradient with backtracking (baseline)."""
    x = np.zeros(problem.dim)
    log = RunLog()
    F = problem.F(x)
    log.append(x, iter=0, wall_ms=0.0, fval=F, gap=F - f_star if f_star is not None else math.nan,
               grad_samples_cum=0, hess_samples_cum=0, hvp_count_cum=0, subsolver_iters=0,
               Et_budget=math.nan, flags="")
    L = 1.0
    grads = 0
    start = time.perf_counter()
    for t in range(1, T + 1):
        fx, g = problem.f(x), problem.grad(x)
        grads += problem.n_samples
        inner = 0
        while True:
            inner += 1
            x_new = problem.nonsmooth.prox(x - g / L, L)
            diff = x_new - x
            if problem.f(x_new) <= fx + g @ diff + 0.5 * L * (diff @ diff) + 1e-15 * abs(fx):
                break
            L *= 2.0
        x = x_new
        L *= 0.9
        F = problem.F(x)
        log.append(x, iter=t, wall_ms=(time.perf_counter() - start) * 1e3 if record_wall_time else 0.0,
                   fval=F, gap=F - f_star if f_star is not None else math.nan,
                   grad_samples_cum=grads, hess_samples_cum=0, hvp_count_cum=0,
                   subsolver_iters=inner, Et_budget=math.nan, flags="")
    return log


def _svrg_bench(problem, cfg: ExperimentConfig, rng):
    """Cubic-Prox-SVRG on the exact model at the origin, one row per stage."""
    x0 = np.zeros(problem.dim)
    eta = 3.0 * problem.constants.L3
    he = sample_hessian(problem, x0, problem.n_samples)
    model = CubicModel(x0, problem.grad(x0), he, eta, problem.f(x0), problem.nonsmooth)
    ref = reference_solve(model, 1e-12) if cfg.reference_gap else None
    m_star = model_value(model, ref.x) if ref is not None else None
    scfg = svrg.SvrgConfig.from_model(model, max_stages=max(cfg.T, 1), target_gap=1e-12)
    he.hvp_count = 0
    sol = svrg.solve(model, scfg, rng)
    log = RunLog(extra_columns=("tau_s",))
    v0 = model_value(model, x0)
    log.append(x0, iter=0, wall_ms=0.0, fval=v0,
               gap=v0 - m_star if m_star is not None else math.nan,
               grad_samples_cum=0, hess_samples_cum=0, hvp_count_cum=0, subsolver_iters=0,
               Et_budget=math.nan, tau_s=math.nan, flags="")
    inner = hvp = 0
    for rec in sol.history:
        inner += rec.M_s
        hvp += rec.M_s + 2 * problem.n_samples
        val = rec.value + model.f_at_anchor
        log.append(x0, iter=rec.stage, wall_ms=0.0, fval=val,
                   gap=val - m_star if m_star is not None else math.nan,
                   grad_samples_cum=0, hess_samples_cum=problem.n_samples, hvp_count_cum=hvp,
                   subsolver_iters=inner, Et_budget=rec.gap_estimate, tau_s=rec.tau_s, flags="")
    if sol.warning:
        log.rows[-1]["flags"] = "sub_warning"
    return log


def run_method(method, problem, cfg: ExperimentConfig, f_star):
    rng = np.random.default_rng(cfg.seed)
    consts = problem.constants
    common = dict(exact_oracles=cfg.exact_oracles, sub_tol_cap=cfg.sub_tol_cap,
                  record_wall_time=cfg.record_wall_time, subsolver=cfg.subsolver)
    if method == "ipcnm":
        conf = ipcnm.IpcnmConfig(mode=cfg.mode, cfg=consts, **common)
        return ipcnm.run(problem, conf, cfg.T, rng, f_star=f_star)
    if method == "aipcnm":
        T = max(cfg.T, 1)
        if cfg.mode == "convex":
            conf = aipcnm.schedule_convex(consts, T, **common)
        else:
            conf = aipcnm.schedule_strongly_convex(consts, T, repair=cfg.repair_constants, **common)
        return aipcnm.run(problem, conf, cfg.T, rng, f_star=f_star)
    if method == "prox_grad":
        return _prox_grad(problem, cfg.T, f_star, cfg.record_wall_time)
    return _svrg_bench(problem, cfg, rng)


def _summary(method, log: RunLog, runtime):
    last = log.last
    warned = any("sub_warning" in row["flags"] for row in log.rows)
    gap = last["gap"]
    return dict(
        method=method,
        iterations=int(last["iter"]),
        final_fval=last["fval"],
        final_gap=None if math.isnan(gap) else gap,
        equivalent_evaluations=int(last["grad_samples_cum"] + last["hvp_count_cum"]),
        grad_samples=int(last["grad_samples_cum"]),
        hvp_count=int(last["hvp_count_cum"]),
        runtime_s=runtime,
        solver_warning=warned,
    )


def _f_star(problem, cfg):
    if not cfg.reference_gap:
        return None
    x_star, F_star = reference_minimum(problem, tol=1e-10)
    return F_star


def run_experiment(config_path, seed=None, out=None) -> int:
    try:
        cfg = parse_config(config_path, seed, out)
        if len(cfg.methods) != 1:
            raise ConfigError("bench run takes exactly one method; use bench compare")
        problem = build_problem(cfg)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    method = cfg.methods[0]
    start = time.perf_counter()
    f_star = _f_star(problem, cfg) if method != "svrg_subsolver_bench" else None
    log = run_method(method, problem, cfg, f_star)
    summary = _summary(method, log, time.perf_counter() - start)
    os.makedirs(cfg.out, exist_ok=True)
    log.to_csv(os.path.join(cfg.out, "log.csv"))
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    if summary["solver_warning"]:
        print("solver warning: subproblem tolerance not reached in some iterations",
              file=sys.stderr)
        return EXIT_WARNING
    return EXIT_OK


def compare_methods(config_path, seed=None, out=None) -> int:
    try:
        cfg = parse_config(config_path, seed, out)
        if len(cfg.methods) < 2:
            raise ConfigError("bench compare needs at least two methods")
        problem = build_problem(cfg)
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    os.makedirs(cfg.out, exist_ok=True)
    f_star = _f_star(problem, cfg)
    summaries, combined = [], []
    status = EXIT_OK
    for method in cfg.methods:
        start = time.perf_counter()
        try:
            log = run_method(method, problem, cfg, f_star)
        except Exception as exc:  # isolate per-method failures
            print(f"{method} failed: {exc}", file=sys.stderr)
            summaries.append(dict(method=method, error=str(exc)))
            status = EXIT_WARNING
            continue
        log.to_csv(os.path.join(cfg.out, f"log_{method}.csv"))
        summ = _summary(method, log, time.perf_counter() - start)
        summaries.append(summ)
        if summ["solver_warning"]:
            status = EXIT_WARNING
        for row in log.rows:
            combined.append((method, row["iter"], row["grad_samples_cum"] + row["hvp_count_cum"],
                             row["gap"], row["fval"]))
    with open(os.path.join(cfg.out, "combined.csv"), "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(("method", "iter", "equivalent_evaluations", "gap", "fval"))
        for method, it, ev, gap, fval in combined:
            writer.writerow((method, int(it), int(ev), "NaN" if math.isnan(gap) else repr(float(gap)),
                             repr(float(fval))))
    with open(os.path.join(cfg.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(dict(methods=summaries), fh, indent=2, sort_keys=True)
    return status


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=("run", "compare"))
    parser.add_argument("config")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--quiet", action="store_true", help="only report errors")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        print("config error: seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_CONFIG
    fn = run_experiment if args.command == "run" else compare_methods
    return fn(args.config, seed=args.seed, out=args.out)


if __name__ == "__main__":
    sys.exit(main())
