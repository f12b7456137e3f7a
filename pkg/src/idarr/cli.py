"""Command line interface: solve, fredholm-bench, timing, deblur, oracle-check.

Exit codes: 0 success, 1 usage, 2 unreadable or malformed files,
3 numerical failure, 4 property violation (oracle check).
"""

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .arrayio import read_array, write_array
from .errors import (
    IdarrError,
    IoError,
    NumericalBreakdownError,
    TrivialDataError,
    UsageError,
)
from .linops import write_pgm
from .problems import (
    NSR_LADDER,
    add_noise,
    clean_problem,
    l2rho_error,
    load_operator,
    make_deblur,
    make_fredholm,
    true_solution,
)
from .rkhs import RkhsGeometry, compute_exploration_weights, dartr_solve, tikhonov_direct
from .solver import Discrepancy, FixedIters, LCurve, dp_stop, idarr_solve, irL2_solve, irl2_solve

ITERATIVE_METHODS = ("iDARR", "IR-l2", "IR-L2")
DIRECT_METHODS = ("l2-direct", "L2-direct", "DARTR")
ALL_METHODS = ITERATIVE_METHODS + DIRECT_METHODS

RESULT_COLUMNS = (
    "method", "nsr", "trial", "k_stop", "l2rho_error",
    "relative_error", "loss", "wall_time_ms", "seed",
)


@dataclass
class ExperimentConfig:
    kernel: str = "exp"
    m: int = 500
    n: int = 100
    truth: str = "in-range"
    nsr_ladder: tuple = NSR_LADDER
    trials: int = 20
    methods: tuple = ALL_METHODS
    stop_rule: str = "lcurve"
    tau: float = 1.01
    max_iters: int = 30
    seed_base: int = 1
    output_dir: str = "results"


_TRUTH_ALIASES = {
    "in": "in-range", "in-range": "in-range",
    "out": "out-of-range", "out-of-range": "out-of-range",
}


def _validate_config(cfg):
    if cfg.kernel not in ("exp", "poly"):
        raise UsageError(f"kernel must be exp or poly, got {cfg.kernel!r}")
    if cfg.truth not in _TRUTH_ALIASES:
        raise UsageError(f"truth must be in-range or out-of-range, got {cfg.truth!r}")
    cfg.truth = _TRUTH_ALIASES[cfg.truth]
    if cfg.m <= 0 or cfg.n <= 0:
        raise UsageError(f"grid sizes must be positive, got m={cfg.m}, n={cfg.n}")
    if cfg.trials <= 0:
        raise UsageError(f"trials must be positive, got {cfg.trials}")
    if not cfg.nsr_ladder or any(v <= 0 for v in cfg.nsr_ladder):
        raise UsageError(f"nsr ladder must be positive, got {cfg.nsr_ladder}")
    unknown = [m for m in cfg.methods if m not in ALL_METHODS]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
    if cfg.stop_rule not in ("lcurve", "dp"):
        raise UsageError(f"stop_rule must be lcurve or dp, got {cfg.stop_rule!r}")
    if cfg.tau <= 1.0:
        raise UsageError(f"tau must exceed 1, got {cfg.tau}")
    if cfg.max_iters < 10:
        raise UsageError(f"max_iters must be at least 10, got {cfg.max_iters}")
    return cfg


def load_config(path, cfg=None):
    """Read key=value sections into an ExperimentConfig."""
    cfg = cfg or ExperimentConfig()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise IoError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise IoError(f"{path}: malformed config: {exc}") from exc
    if not parser.has_section("experiment"):
        raise IoError(f"{path}: missing [experiment] section")
    sec = parser["experiment"]
    try:
        for key in sec:
            if key == "kernel":
                cfg.kernel = sec.get(key)
            elif key == "m":
                cfg.m = sec.getint(key)
            elif key == "n":
                cfg.n = sec.getint(key)
            elif key == "truth":
                cfg.truth = sec.get(key)
            elif key == "nsr_ladder":
                cfg.nsr_ladder = tuple(float(v) for v in sec.get(key).split(",") if v.strip())
            elif key == "trials":
                cfg.trials = sec.getint(key)
            elif key == "methods":
                cfg.methods = tuple(v.strip() for v in sec.get(key).split(",") if v.strip())
            elif key == "stop_rule":
                cfg.stop_rule = sec.get(key)
            elif key == "tau":
                cfg.tau = sec.getfloat(key)
            elif key == "max_iters":
                cfg.max_iters = sec.getint(key)
            elif key == "seed_base":
                cfg.seed_base = sec.getint(key)
            elif key == "output_dir":
                cfg.output_dir = sec.get(key)
            else:
                raise UsageError(f"unknown config key {key!r}")
    except ValueError as exc:
        raise IoError(f"{path}: bad value: {exc}") from exc
    return cfg


def write_config(cfg, path):
    parser = configparser.ConfigParser()
    parser["experiment"] = {
        "kernel": cfg.kernel,
        "m": str(cfg.m),
        "n": str(cfg.n),
        "truth": cfg.truth,
        "nsr_ladder": ",".join(f"{v:g}" for v in cfg.nsr_ladder),
        "trials": str(cfg.trials),
        "methods": ",".join(cfg.methods),
        "stop_rule": cfg.stop_rule,
        "tau": f"{cfg.tau:g}",
        "max_iters": str(cfg.max_iters),
        "seed_base": str(cfg.seed_base),
        "output_dir": cfg.output_dir,
    }
    with open(path, "w", encoding="utf-8") as fh:
        parser.write(fh)


def row_seed(seed_base, method, nsr, trial):
    """Deterministic per-row seed: base XOR a stable digest of the row key."""
    key = f"{method}|{nsr:g}|{trial}".encode("ascii")
    digest = int(hashlib.sha256(key).hexdigest()[:8], 16)
    return int(seed_base) ^ digest


def _worker_count():
    raw = os.environ.get("IDARR_THREADS", "1")
    try:
        count = int(raw)
    except ValueError:
        raise UsageError(f"IDARR_THREADS must be an integer, got {raw!r}") from None
    return max(1, count)


# -- benchmark rows ----------------------------------------------------------

_SETUP_CACHE = {}
_TRUTH_CACHE = {}


def _get_setup(kernel, m, n):
    key = (kernel, m, n)
    if key not in _SETUP_CACHE:
        _SETUP_CACHE[key] = make_fredholm(kernel, m, n)
    return _SETUP_CACHE[key]


def _get_truth(kernel, m, n, truth):
    key = (kernel, m, n, truth)
    if key not in _TRUTH_CACHE:
        _TRUTH_CACHE[key] = true_solution(_get_setup(kernel, m, n), truth)
    return _TRUTH_CACHE[key]


def _make_stop(cfg_dict, problem):
    if cfg_dict["stop_rule"] == "dp":
        return Discrepancy(noise_norm=problem.noise_norm, tau=cfg_dict["tau"],
                           max_iters=cfg_dict["max_iters"])
    return LCurve(min_iters=10, max_iters=cfg_dict["max_iters"])


def run_bench_row(task):
    """Run one (method, nsr, trial) cell; returns the row dict and solution."""
    setup = _get_setup(task["kernel"], task["m"], task["n"])
    x_true = _get_truth(task["kernel"], task["m"], task["n"], task["truth"])
    problem = add_noise(clean_problem(setup, x_true), task["nsr"], task["seed"])
    method = task["method"]
    geom = problem.geom
    b = problem.b
    extras = {}
    t0 = time.perf_counter()
    if method in ITERATIVE_METHODS:
        stop = _make_stop(task, problem)
        solver = {"iDARR": idarr_solve, "IR-L2": irL2_solve}.get(method)
        if solver is not None:
            result = solver(geom, b, stop)
        else:
            result = irl2_solve(problem.linmap, b, stop)
        elapsed = time.perf_counter() - t0
        x = result.x
        k_stop = result.k_stop
        residuals = [rec.residual for rec in result.history]
        k_dp = dp_stop(residuals, problem.noise_norm, task["tau"])
        if isinstance(stop, LCurve):
            extras = {"k_lcurve": k_stop, "k_dp": k_dp,
                      "weak_corner": int(result.weak_corner)}
        else:
            extras = {"k_lcurve": "", "k_dp": k_dp, "weak_corner": ""}
    else:
        entries = problem.linmap.as_dense()
        if method == "DARTR":
            result = dartr_solve(entries, geom.rho, b)
        elif method == "L2-direct":
            result = tikhonov_direct(entries, b, weights=geom.rho)
        else:
            result = tikhonov_direct(entries, b)
        elapsed = time.perf_counter() - t0
        x = result.x
        k_stop = result.corner_index + 1
    err = l2rho_error(geom, x, x_true)
    truth_norm = geom.weighted_norm(x_true)
    res = problem.linmap.apply(x) - b
    row = {
        "method": method,
        "nsr": f"{task['nsr']:g}",
        "trial": task["trial"],
        "k_stop": k_stop,
        "l2rho_error": f"{err:.17g}",
        "relative_error": f"{err / truth_norm:.17g}",
        "loss": f"{float(res @ res):.17g}",
        "wall_time_ms": f"{elapsed * 1e3:.3f}",
        "seed": task["seed"],
    }
    return row, extras, x


def _boxplot_stats(values):
    v = np.sort(np.asarray(values, dtype=np.float64))
    q1, med, q3 = np.percentile(v, [25, 50, 75])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = v[(v >= lo_fence) & (v <= hi_fence)]
    whisker_lo = float(inside[0]) if inside.size else float(v[0])
    whisker_hi = float(inside[-1]) if inside.size else float(v[-1])
    n_out = int(np.count_nonzero((v < lo_fence) | (v > hi_fence)))
    return {
        "count": int(v.size),
        "median": float(med),
        "q1": float(q1),
        "q3": float(q3),
        "whisker_lo": whisker_lo,
        "whisker_hi": whisker_hi,
        "n_outliers": n_out,
    }


def cmd_fredholm_bench(args):
    cfg = ExperimentConfig()
    if args.config:
        cfg = load_config(args.config, cfg)
    for name in ("kernel", "m", "n", "truth", "trials", "stop_rule", "tau",
                 "max_iters", "seed_base", "output_dir"):
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    if args.nsr_ladder is not None:
        cfg.nsr_ladder = tuple(float(v) for v in args.nsr_ladder.split(",") if v.strip())
    if args.methods is not None:
        cfg.methods = tuple(v.strip() for v in args.methods.split(",") if v.strip())
    _validate_config(cfg)

    tasks = []
    for method in cfg.methods:
        for nsr in cfg.nsr_ladder:
            for trial in range(1, cfg.trials + 1):
                tasks.append({
                    "kernel": cfg.kernel, "m": cfg.m, "n": cfg.n, "truth": cfg.truth,
                    "method": method, "nsr": nsr, "trial": trial,
                    "seed": row_seed(cfg.seed_base, method, nsr, trial),
                    "stop_rule": cfg.stop_rule, "tau": cfg.tau,
                    "max_iters": cfg.max_iters,
                })
    workers = _worker_count()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_bench_row, tasks, chunksize=4))
    else:
        outcomes = [run_bench_row(t) for t in tasks]

    os.makedirs(cfg.output_dir, exist_ok=True)
    sol_dir = os.path.join(cfg.output_dir, "solutions")
    os.makedirs(sol_dir, exist_ok=True)
    write_config(cfg, os.path.join(cfg.output_dir, "config_used.cfg"))

    with open(os.path.join(cfg.output_dir, "results.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(RESULT_COLUMNS))
        writer.writeheader()
        for (row, _, _), task in zip(outcomes, tasks):
            writer.writerow(row)

    with open(os.path.join(cfg.output_dir, "stopping.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "nsr", "trial", "k_lcurve", "k_dp", "weak_corner"])
        for (row, extras, _), task in zip(outcomes, tasks):
            if task["method"] in ITERATIVE_METHODS:
                writer.writerow([row["method"], row["nsr"], row["trial"],
                                 extras.get("k_lcurve", ""), extras.get("k_dp", ""),
                                 extras.get("weak_corner", "")])

    for (row, _, x), task in zip(outcomes, tasks):
        name = f"{row['method']}_nsr{row['nsr']}_trial{row['trial']}.bin"
        write_array(os.path.join(sol_dir, name), x)

    with open(os.path.join(cfg.output_dir, "stats.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "nsr", "count", "median", "q1", "q3",
                         "whisker_lo", "whisker_hi", "n_outliers"])
        for method in cfg.methods:
            for nsr in cfg.nsr_ladder:
                vals = [float(row["l2rho_error"]) for (row, _, _), task in
                        zip(outcomes, tasks)
                        if row["method"] == method and task["nsr"] == nsr]
                st = _boxplot_stats(vals)
                writer.writerow([method, f"{nsr:g}", st["count"],
                                 f"{st['median']:.17g}", f"{st['q1']:.17g}",
                                 f"{st['q3']:.17g}", f"{st['whisker_lo']:.17g}",
                                 f"{st['whisker_hi']:.17g}", st["n_outliers"]])

    print(f"wrote {len(tasks)} rows to {os.path.join(cfg.output_dir, 'results.csv')}")
    return 0


def run_timing_sweep(n_ladder, m=500, k_fixed=10, replicas=25, seed=0):
    """Interleaved wall-time sweep of the iterative and direct solvers.

    Millisecond-scale solves are dominated by scheduler and cache noise,
    so each measurement round visits every problem size once in shuffled
    order and the reported figure per (solver, size) is the minimum over
    rounds — the least noise-contaminated estimate of the true cost.
    Garbage collection is paused during timed regions and every solver is
    warmed up once beforehand. Returns (rows, best): per-replica records
    (solver, n, replica, milliseconds) and the minima keyed by
    (solver, n).
    """
    import gc
    import random

    problems = {}
    for n in n_ladder:
        setup = make_fredholm("exp", m, n)
        x_true = true_solution(setup, "out-of-range")
        problems[n] = add_noise(clean_problem(setup, x_true), 0.05, seed + n)
    stop = FixedIters(k_fixed)
    for problem in problems.values():
        idarr_solve(problem.geom, problem.b, stop)
        dartr_solve(problem.linmap, problem.geom.rho, problem.b)
    rows = []
    best = {}
    order = list(n_ladder)
    shuffler = random.Random(seed)
    direct_rounds = max(3, replicas // 5)
    gc.disable()
    try:
        for rep in range(replicas):
            shuffler.shuffle(order)
            for n in order:
                problem = problems[n]
                t0 = time.perf_counter()
                idarr_solve(problem.geom, problem.b, stop)
                ms = (time.perf_counter() - t0) * 1e3
                rows.append(("iDARR", n, rep + 1, ms))
                key = ("iDARR", n)
                best[key] = min(best.get(key, ms), ms)
        for rep in range(direct_rounds):
            shuffler.shuffle(order)
            for n in order:
                problem = problems[n]
                t0 = time.perf_counter()
                dartr_solve(problem.linmap, problem.geom.rho, problem.b)
                ms = (time.perf_counter() - t0) * 1e3
                rows.append(("DARTR", n, rep + 1, ms))
                key = ("DARTR", n)
                best[key] = min(best.get(key, ms), ms)
    finally:
        gc.enable()
    return rows, best


def cmd_timing(args):
    if args.k_fixed <= 0:
        raise UsageError(f"k-fixed must be positive, got {args.k_fixed}")
    try:
        ladder = [int(v) for v in args.n_ladder.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad n-ladder {args.n_ladder!r}") from None
    if not ladder or any(v <= 0 for v in ladder):
        raise UsageError(f"n-ladder must be positive integers, got {args.n_ladder!r}")
    os.makedirs(args.output_dir, exist_ok=True)
    rows, best = run_timing_sweep(
        ladder, m=args.m, k_fixed=args.k_fixed, replicas=args.replicas, seed=args.seed
    )
    out_path = os.path.join(args.output_dir, "timing.csv")
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["solver", "n", "replica", "wall_time_ms"])
        for solver, n, rep, ms in rows:
            writer.writerow([solver, n, rep, f"{ms:.3f}"])
    for solver in ("iDARR", "DARTR"):
        pretty = ", ".join(f"n={n}: {best[(solver, n)]:.2f}ms" for n in ladder)
        ratios = ", ".join(
            f"{a}->{b}: x{best[(solver, b)] / best[(solver, a)]:.2f}"
            for a, b in zip(ladder, ladder[1:])
        )
        print(f"{solver}: {pretty}" + (f"  ({ratios})" if ratios else ""))
    print(f"wrote {out_path}")
    return 0


def cmd_deblur(args):
    try:
        problem = make_deblur(args.image, psf=args.psf, nsr=args.nsr, seed=args.seed)
    except ValueError as exc:
        # bad synthetic-image kind, unparsable psf width, negative ratio ...
        raise UsageError(str(exc)) from exc
    side = problem.linmap.side
    stop = LCurve(min_iters=10, max_iters=args.max_iters)
    t0 = time.perf_counter()
    if args.method == "iDARR":
        result = idarr_solve(problem.geom, problem.b, stop, store_iterates=True)
    elif args.method == "IR-l2":
        result = irl2_solve(problem.linmap, problem.b, stop, store_iterates=True)
    elif args.method == "IR-L2":
        result = irL2_solve(problem.geom, problem.b, stop, store_iterates=True)
    else:
        raise UsageError(f"deblur supports iterative methods only, got {args.method!r}")
    elapsed = time.perf_counter() - t0
    os.makedirs(args.output_dir, exist_ok=True)
    write_pgm(os.path.join(args.output_dir, "blurred.pgm"),
              np.clip(problem.b.reshape(side, side), 0, 1) * 255)
    write_pgm(os.path.join(args.output_dir, "restored.pgm"),
              np.clip(result.x.reshape(side, side), 0, 1) * 255)
    truth = problem.x_true
    tnorm = float(np.linalg.norm(truth))
    with open(os.path.join(args.output_dir, "error_curve.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k", "residual", "penalty_norm", "rel_error_l2",
                         "rel_error_weighted"])
        wnorm = problem.geom.weighted_norm(truth)
        for rec, x_k in zip(result.history, result.iterates):
            rel = np.linalg.norm(x_k - truth) / tnorm
            relw = l2rho_error(problem.geom, x_k, truth) / wnorm
            writer.writerow([rec.k, f"{rec.residual:.17g}", f"{rec.penalty_norm:.17g}",
                             f"{rel:.17g}", f"{relw:.17g}"])
    summary = {
        "method": args.method,
        "side": side,
        "nsr": args.nsr,
        "k_stop": result.k_stop,
        "k_t": result.k_t,
        "weak_corner": result.weak_corner,
        "residual": result.residual,
        "rel_error_l2": float(np.linalg.norm(result.x - truth) / tnorm),
        "elapsed_s": elapsed,
    }
    with open(os.path.join(args.output_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1)
        fh.write("\n")
    print(f"k_stop={result.k_stop} rel_error={summary['rel_error_l2']:.4f} "
          f"({elapsed:.1f}s), outputs in {args.output_dir}")
    return 0


def _parse_stop_flag(spec, max_iters):
    if spec == "lcurve":
        return LCurve(min_iters=10, max_iters=max(max_iters, 10))
    if spec.startswith("dp:"):
        parts = spec.split(":")
        try:
            noise = float(parts[1])
            tau = float(parts[2]) if len(parts) > 2 else 1.01
        except (IndexError, ValueError):
            raise UsageError(f"bad stop spec {spec!r}; expected dp:NOISE[:TAU]") from None
        return Discrepancy(noise_norm=noise, tau=tau, max_iters=max_iters)
    if spec.startswith("fixed:"):
        try:
            k = int(spec.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad stop spec {spec!r}; expected fixed:K") from None
        if k <= 0:
            raise UsageError(f"fixed iteration count must be positive, got {k}")
        return FixedIters(k)
    raise UsageError(f"unknown stop rule {spec!r}")


def cmd_solve(args):
    linmap = load_operator(args.operator)
    b = read_array(args.data)
    if b.ndim != 1:
        raise IoError(f"{args.data}: expected a vector, got shape {b.shape}")
    method = args.method
    t0 = time.perf_counter()
    if method in ("iDARR", "IR-L2", "L2-direct", "DARTR"):
        geom = RkhsGeometry(linmap, compute_exploration_weights(linmap))
    if method in ITERATIVE_METHODS:
        stop = _parse_stop_flag(args.stop, args.max_iters)
        if method == "iDARR":
            result = idarr_solve(geom, b, stop, reorthogonalize=args.reorthogonalize)
        elif method == "IR-L2":
            result = irL2_solve(geom, b, stop, reorthogonalize=args.reorthogonalize)
        else:
            result = irl2_solve(linmap, b, stop, reorthogonalize=args.reorthogonalize)
        x = result.x
        note = (f"k_stop={result.k_stop} residual={result.residual:.6g} "
                f"converged={result.converged}")
    else:
        if method == "DARTR":
            result = dartr_solve(linmap, geom.rho, b)
        elif method == "L2-direct":
            result = tikhonov_direct(linmap, b, weights=geom.rho)
        else:
            result = tikhonov_direct(linmap, b)
        x = result.x
        note = f"lambda={result.lam:.6g} corner_index={result.corner_index}"
    elapsed = time.perf_counter() - t0
    write_array(args.out, x)
    print(f"method={method} {note} elapsed_ms={elapsed * 1e3:.1f} -> {args.out}")
    return 0


# -- oracle battery ----------------------------------------------------------


def _oracle_orthogonality(rng, m, n, steps):
    from .bidiag import run_bidiag

    a = rng.standard_normal((m, n))
    from .linops import DenseMap

    linmap = DenseMap(a)
    geom = RkhsGeometry(linmap, compute_exploration_weights(linmap))
    b = rng.standard_normal(m)
    factors = run_bidiag(geom, b, steps, reorthogonalize=True)
    u = np.column_stack(factors.U)
    dev_u = np.max(np.abs(u.T @ u - np.eye(u.shape[1])))
    z = np.column_stack(factors.Z)
    zbar = np.column_stack(factors.Zbar)
    dev_z = np.max(np.abs(z.T @ zbar - np.eye(z.shape[1])))
    return max(dev_u, dev_z)


def _oracle_count(rng, m, n):
    from .bidiag import BidiagProcess
    from .linops import DenseMap

    sigmas = np.array([2.5, 2.5, 1.8, 1.0, 1.0, 0.7])
    r = sigmas.size
    u0 = np.linalg.qr(rng.standard_normal((m, m)))[0][:, :r]
    v0 = np.linalg.qr(rng.standard_normal((n, n)))[0][:, :r]
    a = (u0 * sigmas) @ v0.T
    linmap = DenseMap(a)
    rho = np.full(n, 1.0 / n)
    geom = RkhsGeometry(linmap, rho)
    picks = [0, 2, 5]  # one representative of each chosen distinct value
    b = u0[:, picks] @ rng.uniform(0.5, 1.5, size=len(picks))
    proc = BidiagProcess(linmap, b, pinv_apply=geom.apply_crkhs_pinv, reorthogonalize=True)
    while not proc.terminated:
        proc.advance()
    return proc.k_t, len(picks)


def _oracle_residual_identity(rng, m, n):
    from .linops import DenseMap

    a = rng.standard_normal((m, n))
    linmap = DenseMap(a)
    geom = RkhsGeometry(linmap, compute_exploration_weights(linmap))
    b = rng.standard_normal(m)
    result = idarr_solve(geom, b, FixedIters(min(n, 15)), store_iterates=True)
    worst = 0.0
    for rec, x_k in zip(result.history, result.iterates):
        actual = np.linalg.norm(linmap.apply(x_k) - b)
        worst = max(worst, abs(actual - rec.residual))
    return worst / np.linalg.norm(b)


def _rank_deficient_instance(rng, m, n, rank):
    from .linops import DenseMap

    left = np.linalg.qr(rng.standard_normal((m, rank)))[0]
    right = np.linalg.qr(rng.standard_normal((n, rank)))[0]
    sigmas = np.geomspace(3.0, 0.5, rank)
    a = (left * sigmas) @ right.T
    linmap = DenseMap(a)
    geom = RkhsGeometry(linmap, compute_exploration_weights(linmap))
    b = rng.standard_normal(m)
    return linmap, geom, b


def _restricted_oracle(linmap, geom, b):
    from .rkhs import generalized_eig

    a = linmap.entries
    decomp = generalized_eig(a.T @ a, geom.rho)
    r = decomp.rank
    w = decomp.V[:, :r] * np.sqrt(decomp.lambdas[:r])[None, :]
    y, *_ = np.linalg.lstsq(a @ w, b, rcond=None)
    return w @ y


def _oracle_terminal(rng, m, n, rank):
    linmap, geom, b = _rank_deficient_instance(rng, m, n, rank)
    result = idarr_solve(geom, b, FixedIters(n + 5), reorthogonalize=True,
                         store_iterates=True)
    x_star = _restricted_oracle(linmap, geom, b)
    return float(np.linalg.norm(result.x - x_star) / np.linalg.norm(x_star))


def _oracle_uniqueness(rng, m, n, rank):
    from .bidiag import run_bidiag

    linmap, geom, b = _rank_deficient_instance(rng, m, n, rank)
    k = max(rank - 2, 1)
    result = idarr_solve(geom, b, FixedIters(k), reorthogonalize=True,
                         store_iterates=True)
    factors = run_bidiag(geom, b, k, reorthogonalize=True)
    z = np.column_stack(factors.Z[:k])
    mix = rng.standard_normal((k, k)) + 3.0 * np.eye(k)
    basis = z @ mix
    y, *_ = np.linalg.lstsq(linmap.entries @ basis, b, rcond=None)
    x_alt = basis @ y
    return float(np.linalg.norm(result.x - x_alt) / np.linalg.norm(x_alt))


def cmd_oracle_check(args):
    rng = np.random.default_rng(args.seed)
    m, n = args.m, args.n
    rank = args.rank if args.rank else max(min(m, n) // 2, 2)
    checks = []
    dev = _oracle_orthogonality(rng, m, n, min(n, args.steps))
    checks.append(("orthogonality", dev, 1e-10))
    k_t, q = _oracle_count(rng, max(m, 12), max(n, 10))
    checks.append(("termination-count", abs(k_t - q), 0.5))
    dev = _oracle_residual_identity(rng, m, n)
    checks.append(("residual-identity", dev, 1e-9))
    dev = _oracle_terminal(rng, m, n, rank)
    checks.append(("terminal-solution", dev, 1e-6))
    dev = _oracle_uniqueness(rng, m, n, rank)
    checks.append(("subspace-uniqueness", dev, 1e-8))
    failed = False
    for name, value, tol in checks:
        ok = value <= tol
        failed = failed or not ok
        print(f"PROP {name:<20} max_dev={value:.3e} tol={tol:.0e} "
              f"{'PASS' if ok else 'FAIL'}")
    return 4 if failed else 0


# -- parser ------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = _Parser(prog="idarr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one problem from operator and data files")
    p.add_argument("--operator", required=True, help="operator descriptor (json)")
    p.add_argument("--data", required=True, help="data vector file")
    p.add_argument("--method", default="iDARR", choices=ALL_METHODS)
    p.add_argument("--stop", default="lcurve", help="lcurve | dp:NOISE[:TAU] | fixed:K")
    p.add_argument("--max-iters", type=int, default=30)
    p.add_argument("--reorthogonalize", action="store_true")
    p.add_argument("--out", default="solution.bin")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("fredholm-bench", help="noise-ladder benchmark on integral equations")
    p.add_argument("--config", help="key=value config file ([experiment] section)")
    p.add_argument("--kernel", choices=("exp", "poly"))
    p.add_argument("--m", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--truth")
    p.add_argument("--nsr-ladder", dest="nsr_ladder")
    p.add_argument("--trials", type=int)
    p.add_argument("--methods")
    p.add_argument("--stop-rule", dest="stop_rule", choices=("lcurve", "dp"))
    p.add_argument("--tau", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--seed-base", dest="seed_base", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_fredholm_bench)

    p = sub.add_parser("timing", help="wall-time scaling of the iterative and direct solvers")
    p.add_argument("--n-ladder", dest="n_ladder", default="200,400,800")
    p.add_argument("--m", type=int, default=500)
    p.add_argument("--k-fixed", dest="k_fixed", type=int, default=10)
    p.add_argument("--replicas", type=int, default=10)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--output-dir", dest="output_dir", default="results")
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("deblur", help="image deblurring demo")
    p.add_argument("--image", default="blobs:64",
                   help="pgm file or synthetic spec kind:side")
    p.add_argument("--psf", default="gaussian:2", help="gaussian:WIDTH or text grid file")
    p.add_argument("--nsr", type=float, default=0.01)
    p.add_argument("--method", default="iDARR", choices=ITERATIVE_METHODS)
    p.add_argument("--max-iters", dest="max_iters", type=int, default=60)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--output-dir", dest="output_dir", default="deblur_out")
    p.set_defaults(func=cmd_deblur)

    p = sub.add_parser("oracle-check", help="verify structural properties on random instances")
    p.add_argument("--m", type=int, default=30)
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--rank", type=int, default=0)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--seed", type=int, default=3)
    p.set_defaults(func=cmd_oracle_check)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (IoError, OSError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except (NumericalBreakdownError, TrivialDataError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except IdarrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
