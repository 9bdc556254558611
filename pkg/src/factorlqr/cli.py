"""Command-line front end.

    factorlqr solve    --config cfg.json [--variant sequ] [--out DIR]
    factorlqr simulate --config cfg.json [--variant parallel]
    factorlqr model    --config cfg.json
    factorlqr compare  --config cfg.json

Exit codes: 0 success, 1 configuration error, 2 solver error.
"""

import argparse
import csv
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import accel
from .errors import ProblemError
from .problem import LqrProblem
from .solvers import VARIANTS, Variant, random_problem, solve_variant
from .tracking import (
    BENCHMARK_COURSE, TRACE_COLUMNS, ReferencePath, SimConfig, SimulationError,
    VehicleState, benchmark_problem, run_closed_loop,
)

log = logging.getLogger("factorlqr")

TIMING_REPEATS = 10
PRECISIONS = {"single": np.float32, "double": np.float64}


class ConfigError(ValueError):
    pass


class SolverFailure(RuntimeError):
    pass


# -- config parsing ---------------------------------------------------------

def load_config(path):
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"malformed JSON in {path}: {err}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be an object")
    unknown = set(cfg) - {"problem", "sim", "model", "output"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _section(cfg, name):
    sec = cfg.get(name)
    if sec is None:
        raise ConfigError(f"config has no '{name}' section")
    if not isinstance(sec, dict):
        raise ConfigError(f"'{name}' section must be an object")
    return sec


def parse_problem(sec, seed=None):
    """Build an LqrProblem from the ``problem`` section."""
    modes = [k for k in ("scenario", "A", "random") if k in sec]
    if len(modes) != 1:
        raise ConfigError("problem section needs exactly one of 'scenario', explicit matrices, or 'random'")
    try:
        e = int(sec.get("e", 10))
        if "scenario" in sec:
            if sec["scenario"] != "benchmark-course":
                raise ConfigError(f"unknown scenario {sec['scenario']!r}")
            kw = {"N": int(sec.get("N", 50)), "weight_exponent": e}
            if "x0" in sec:
                kw["x0"] = sec["x0"]
            return benchmark_problem(**kw)
        if "random" in sec:
            r = sec["random"]
            rng = np.random.default_rng(seed if seed is not None else r.get("seed", 0))
            return random_problem(rng, r.get("n"), r.get("m"), r.get("N"), e)
        missing = [k for k in ("A", "B", "Q", "R", "N", "x0") if k not in sec]
        if missing:
            raise ConfigError(f"problem section missing {missing}")
        return LqrProblem(sec["A"], sec["B"], sec["Q"], sec["R"], sec["N"], sec["x0"], e)
    except (ProblemError, TypeError, ValueError, KeyError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(f"invalid problem section: {err}") from None


def parse_sim(sec, variant=None, dtype=np.float64):
    try:
        course = sec.get("course", "benchmark")
        if course == "benchmark":
            course = list(BENCHMARK_COURSE)
        if not isinstance(course, list) or not course:
            raise ConfigError("sim.course must be 'benchmark' or a non-empty list of segments")
        ref = ReferencePath.from_segments(
            course, float(sec.get("target_speed", 2.0)),
            tuple(sec.get("origin", (0.0, 0.0))), float(sec.get("heading", 0.0)),
        )
        st = sec.get("start", {"x": 0.0, "y": 0.5, "yaw": 0.0, "v": 1.5})
        start = VehicleState(float(st["x"]), float(st["y"]), float(st["yaw"]), float(st["v"]))
        simcfg = SimConfig(
            dt=float(sec.get("dt", 0.1)),
            L=float(sec.get("L", 0.5)),
            max_steer=float(sec.get("max_steer", 0.6)),
            goal_tol=float(sec.get("goal_tol", 0.3)),
            max_steps=int(sec.get("max_steps", 500)),
            N=int(sec.get("N", 50)),
            variant=variant or sec.get("variant", "sequ"),
            weight_exponent=int(sec.get("e", 10)),
            dtype=dtype,
        )
    except ConfigError:
        raise
    except (ProblemError, TypeError, ValueError, KeyError) as err:
        raise ConfigError(f"invalid sim section: {err}") from None
    return simcfg, ref, start


def parse_model(sec):
    try:
        n_u = sec.get("n_u", [1, 2, 4, 8])
        n_u = [int(v) for v in (n_u if isinstance(n_u, list) else [n_u])]
        if not n_u:
            raise ConfigError("model.n_u must not be empty")
        base = {k: sec[k] for k in ("clock_hz", "add", "mul", "div", "sqrt", "fifo_depth") if k in sec}
        cfgs = [accel.PipelineConfig(n_u=v, **base) for v in n_u]
        d = sec.get("dims", {"n": 5, "m": 2, "N": 50})
        dims = (int(d["n"]), int(d["m"]), int(d["N"]))
        if min(dims) < 1:
            raise ConfigError("model.dims must be positive")
        pow2 = bool(sec.get("pow2", True))
    except ConfigError:
        raise
    except (TypeError, ValueError, KeyError) as err:
        raise ConfigError(f"invalid model section: {err}") from None
    return cfgs, dims, pow2


# -- output helpers ---------------------------------------------------------

def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_trajectory_csv(path, traj):
    n, m = traj.states.shape[1], traj.controls.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k"] + [f"x{i}" for i in range(n)] + [f"u{j}" for j in range(m)])
        for k, x in enumerate(traj.states):
            u = traj.controls[k] if k < traj.N else [""] * m
            w.writerow([k] + [repr(float(v)) for v in x] + [v if v == "" else repr(float(v)) for v in u])


def write_trace_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in TRACE_COLUMNS})


def _out_dir(args, cfg):
    out = Path(args.out or cfg.get("output", {}).get("dir", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _solve(p, variant, dtype):
    try:
        return solve_variant(p, variant, dtype)
    except Exception as err:
        raise SolverFailure(f"variant {Variant(variant).value} failed at step 'solve': {err}") from err


# -- commands ---------------------------------------------------------------

def cmd_solve(args):
    cfg = load_config(args.config)
    p = parse_problem(_section(cfg, "problem"), args.seed)
    variant = Variant(args.variant or "sequ")
    dtype = PRECISIONS[args.precision]
    traj, diag = _solve(p, variant, dtype)
    times = []
    for _ in range(TIMING_REPEATS):
        t0 = time.perf_counter()
        _solve(p, variant, dtype)
        times.append(time.perf_counter() - t0)
    diag["wall_time_s"] = statistics.median(times)
    diag.update({"precision": args.precision, "n": p.n, "m": p.m, "N": p.N, "weight_exponent": p.weight_exponent})
    out = _out_dir(args, cfg)
    write_trajectory_csv(out / f"trajectory_{variant.value}.csv", traj)
    _write_json(out / f"diagnostics_{variant.value}.json", diag)
    print(json.dumps(diag, sort_keys=True))
    return 0


def _simulate(sec, variant, dtype):
    simcfg, ref, start = parse_sim(sec, variant, dtype)
    try:
        return run_closed_loop(simcfg, ref, start)
    except SimulationError as err:
        raise SolverFailure(str(err)) from err


def cmd_simulate(args):
    cfg = load_config(args.config)
    sec = _section(cfg, "sim")
    result = _simulate(sec, args.variant, PRECISIONS[args.precision])
    out = _out_dir(args, cfg)
    write_trace_csv(out / f"trace_{result.variant}.csv", result.rows)
    summary = result.summary()
    _write_json(out / f"summary_{result.variant}.json", summary)
    if not result.converged:
        log.warning("goal not reached within %d steps", result.steps)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_model(args):
    cfg = load_config(args.config)
    cfgs, dims, pow2 = parse_model(_section(cfg, "model"))
    sweep = []
    for pc in cfgs:
        seq = accel.model_solve(dims, accel.SEQUENTIAL, pc, pow2)
        two = accel.model_solve(dims, accel.TWO_FRONT, pc, pow2)
        sweep.append({
            "n_u": pc.n_u,
            "sequential": seq.to_dict(),
            "two_front": two.to_dict(),
            "qr_ratio": seq.qr / two.qr,
        })
    report = {
        "dims": {"n": dims[0], "m": dims[1], "N": dims[2]},
        "pow2_whitening": pow2,
        "whitening_speedup_per_row": accel.whitening_speedup(dims[0], cfgs[0]),
        "sweep": sweep,
    }
    out = _out_dir(args, cfg)
    _write_json(out / "latency_model.json", report)
    print(json.dumps(report, sort_keys=True))
    return 0


COMPARE_COLUMNS = ("variant", "cost", "dynamics_residual", "latency_s", "converged", "steps")


def cmd_compare(args):
    cfg = load_config(args.config)
    dtype = PRECISIONS[args.precision]
    closed_loop = "sim" in cfg
    if closed_loop:
        sec = _section(cfg, "sim")
        parse_sim(sec, None, dtype)
    else:
        p = parse_problem(_section(cfg, "problem"), args.seed)

    def run(v):
        if closed_loop:
            res = _simulate(sec, v.value, dtype)
            s = res.summary()
            return {
                "variant": v.value, "cost": res.cost,
                "dynamics_residual": s["max_dynamics_residual"],
                "latency_s": s["solve_latency_s"]["median"],
                "converged": res.converged, "steps": res.steps,
            }
        _, diag = _solve(p, v, dtype)
        return {
            "variant": v.value, "cost": diag["cost"],
            "dynamics_residual": diag["dynamics_residual"],
            "latency_s": diag["wall_time_s"], "converged": True, "steps": 1,
        }

    failures, rows = [], []
    with ThreadPoolExecutor(max_workers=len(VARIANTS)) as pool:
        futures = {v: pool.submit(run, v) for v in VARIANTS}
        for v, fut in futures.items():
            try:
                rows.append(fut.result())
            except SolverFailure as err:
                failures.append(f"{v.value}: {err}")
    if failures:
        raise SolverFailure("variants failed: " + "; ".join(failures))

    out = _out_dir(args, cfg)
    with open(out / "compare.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COMPARE_COLUMNS)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    lines = [f"{'variant':<10}{'cost':>16}{'residual':>14}{'latency [ms]':>14}"]
    for row in rows:
        lines.append(
            f"{row['variant']:<10}{row['cost']:>16.8g}{row['dynamics_residual']:>14.3e}"
            f"{row['latency_s'] * 1e3:>14.3f}"
        )
    text = "\n".join(lines) + "\n"
    (out / "compare.txt").write_text(text)
    print(text, end="")
    return 0


COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "model": cmd_model, "compare": cmd_compare}


def build_parser():
    parser = argparse.ArgumentParser(prog="factorlqr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--variant", choices=[v.value for v in VARIANTS])
        sp.add_argument("--out")
        sp.add_argument("--precision", choices=sorted(PRECISIONS), default="double")
        sp.add_argument("--seed", type=int)
    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        log.error("config error: %s", err)
        return 1
    except SolverFailure as err:
        log.error("solver error: %s", err)
        return 2


if __name__ == "__main__":
    sys.exit(main())
