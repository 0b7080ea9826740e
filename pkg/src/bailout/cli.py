"""Command-line front end: ``bailout <command> --config FILE [--seed N] [--out DIR] [--threads N]``.

Configs are TOML.  Every section and key is checked against the schema
below and unknown keys are rejected.  Each run writes ``summary.json``
(inputs, results, truncation bounds, diagnostics, runtime) and
command-specific CSV files into the output directory.

Exit status: 0 success, 2 invalid config or model, 3 solver failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import diffusion_oracle as oracle
from . import map_engine as me
from . import single_solver as ss
from .errors import BailoutError, ConfigError, ValidationError
from .levy_model import LevyModel, PayoffSpec, ProblemSpec, validate_model, validate_problem
from .path_engine import save_batch, simulate_batch

COMMANDS = ("solve-single", "solve-map", "g-curve", "sweep-barrier", "oracle-check", "paths")

# section -> {key: default}; None means "required or derived"
SCHEMA = {
    "mc": {"seed": 0, "n_paths": 10_000, "dt": 0.05, "horizon": 50.0, "bridge": False},
    "solver": {"tol_b": 1e-3, "max_iter": 20, "b_max": 1e3, "b_init": 1.0, "scheme": "policy",
               "bisect_tol": 1e-10, "projection_tol": 0.05},
    "model": {"drift": 0.0, "sigma": 0.0, "jumps": []},
    "problem": {"beta": 1.2, "q": None, "r": None, "payoff": {"kind": "zero"}},
    "map": {"beta": 1.2, "generator": None, "q_disc": None, "states": None, "switch_jumps": [],
            "b0": None, "init": "barrier"},
    "grid": {"n_knots": 101, "upper": None, "power": 1.5},
    "scan": {"barriers": None, "b_min": None, "b_max": None, "n": None},
    "sweep": {"n": 25, "lo": 0.5, "hi": 1.5, "x": 0.0, "barriers": None, "method": "policy"},
    "values": {"x": None},
    "output": {"directory": "out", "formats": ["csv", "json"]},
}
PAYOFF_KEYS = {
    "zero": set(),
    "linear": {"slope", "intercept"},
    "capped": {"cap", "slope"},
    "piecewise": {"knots", "values", "tail_slope"},
}
SWITCH_KEYS = {"from", "to", "direction", "size"}


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}", "CONFIG_UNREADABLE") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", "CONFIG_SYNTAX") from exc
    return normalize_config(raw)


def normalize_config(raw):
    """Fill defaults and reject unknown sections or keys."""
    raw = dict(raw)
    command = raw.pop("command", None)
    if command is not None and command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", "CONFIG_UNKNOWN_COMMAND")
    cfg = {"command": command}
    for section in raw:
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", "CONFIG_UNKNOWN_KEY")
    for section, defaults in SCHEMA.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table", "CONFIG_TYPE")
        unknown = set(given) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(unknown)}", "CONFIG_UNKNOWN_KEY")
        merged = {k: given.get(k, v) for k, v in defaults.items()}
        merged["_given"] = section in raw
        cfg[section] = merged
    return cfg


def _payoff(d):
    d = dict(d)
    kind = d.pop("kind", "zero")
    if kind not in PAYOFF_KEYS:
        raise ConfigError(f"unknown payoff kind {kind!r}", "CONFIG_TYPE")
    if set(d) - PAYOFF_KEYS[kind]:
        raise ConfigError(f"unknown payoff key(s) {sorted(set(d) - PAYOFF_KEYS[kind])}", "CONFIG_UNKNOWN_KEY")
    if kind == "zero":
        return PayoffSpec.zero()
    if kind == "linear":
        return PayoffSpec.linear(float(d.get("slope", 0.0)), float(d.get("intercept", 0.0)))
    if kind == "capped":
        return PayoffSpec.capped(float(d["cap"]), float(d.get("slope", 1.0)))
    return PayoffSpec.piecewise_linear(d["knots"], d["values"], float(d.get("tail_slope", 0.0)))


def _model(d):
    try:
        return LevyModel.from_dict({k: d[k] for k in ("drift", "sigma", "jumps")})
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad model: {exc}", "CONFIG_TYPE") from exc


def build_problem(cfg) -> ProblemSpec:
    p = cfg["problem"]
    if p["q"] is None or p["r"] is None:
        raise ConfigError("[problem] needs q and r", "CONFIG_MISSING_KEY")
    try:
        payoff = _payoff(p["payoff"])
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad payoff: {exc}", "CONFIG_TYPE") from exc
    spec = ProblemSpec(_model(cfg["model"]), float(p["beta"]), float(p["q"]), float(p["r"]), payoff)
    problems = validate_model(spec.model) + validate_problem(spec)
    if problems:
        raise ValidationError(problems)
    return spec


def build_map(cfg) -> me.MapModel:
    m = cfg["map"]
    for key in ("generator", "q_disc", "states"):
        if m[key] is None:
            raise ConfigError(f"[map] needs {key}", "CONFIG_MISSING_KEY")
    models = []
    for st in m["states"]:
        extra = set(st) - {"drift", "sigma", "jumps"}
        if extra:
            raise ConfigError(f"unknown key(s) in [[map.states]]: {sorted(extra)}", "CONFIG_UNKNOWN_KEY")
        models.append(_model({"drift": st.get("drift", 0.0), "sigma": st.get("sigma", 0.0),
                              "jumps": st.get("jumps", [])}))
    s = len(models)
    table = [[me.SwitchJump() for _ in range(s)] for _ in range(s)]
    for sj in m["switch_jumps"]:
        extra = set(sj) - SWITCH_KEYS
        if extra:
            raise ConfigError(f"unknown key(s) in [[map.switch_jumps]]: {sorted(extra)}", "CONFIG_UNKNOWN_KEY")
        try:
            spec = {"direction": sj.get("direction", "none"), **sj.get("size", {})}
            table[int(sj["from"])][int(sj["to"])] = me.SwitchJump.from_dict(spec)
        except (KeyError, ValueError, IndexError) as exc:
            raise ConfigError(f"bad switch jump: {exc}", "CONFIG_TYPE") from exc
    try:
        model = me.MapModel(tuple(models), m["generator"], m["q_disc"], m["beta"], tuple(map(tuple, table)))
    except ValueError as exc:
        raise ConfigError(f"bad map: {exc}", "CONFIG_TYPE") from exc
    problems = me.validate_map(model)
    if problems:
        raise ValidationError(problems)
    return model


def _mc(cfg):
    mc = cfg["mc"]
    return int(mc["seed"]), int(mc["n_paths"]), float(mc["dt"]), float(mc["horizon"]), bool(mc["bridge"])


def _set_threads(threads):
    import numba

    numba.set_num_threads(max(1, min(int(threads), numba.config.NUMBA_NUM_THREADS)))


def _clean(obj):
    """JSON-safe copy: numpy to python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items() if not str(k).startswith("_")}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def _barrier_grid(scan):
    if scan["barriers"] is not None:
        grid = np.asarray(scan["barriers"], dtype=float)
    elif scan["n"] is not None:
        lo = 0.0 if scan["b_min"] is None else float(scan["b_min"])
        hi = float(scan["b_max"] if scan["b_max"] is not None else 1.0)
        grid = np.linspace(lo, hi, int(scan["n"])) if int(scan["n"]) > 0 else np.empty(0)
    else:
        grid = np.empty(0)
    if grid.size == 0:
        raise ConfigError("barrier grid is empty", "CONFIG_EMPTY_GRID")
    return grid


# ---------------------------------------------------------------- commands


def cmd_paths(cfg, out, threads, summary):
    spec_model = _model(cfg["model"])
    problems = validate_model(spec_model)
    if problems:
        raise ValidationError(problems)
    seed, n, dt, horizon, bridge = _mc(cfg)
    batch = simulate_batch(spec_model, dt, horizon, n, seed, threads=threads)
    save_batch(batch, out / "paths.bin")
    summary["results"] = {
        "n_paths": batch.n_paths,
        "n_steps": batch.n_steps,
        "mean_terminal": float(batch.increments.sum(axis=1).mean()),
        "file": "paths.bin",
    }


def _single_setup(cfg, threads):
    spec = build_problem(cfg)
    seed, n, dt, horizon, bridge = _mc(cfg)
    batch = simulate_batch(spec.model, dt, horizon, n, seed, threads=threads, bridge=bridge)
    return spec, batch


def _bounds(spec, horizon, b):
    return {"g": ss.truncation_bound(spec, horizon, kind="g"),
            "value": ss.truncation_bound(spec, horizon, b=b, kind="value")}


def cmd_solve_single(cfg, out, threads, summary):
    spec, batch = _single_setup(cfg, threads)
    sv = cfg["solver"]
    sol = ss.solve_bstar(spec, batch, tol_b=float(sv["tol_b"]), b_max=float(sv["b_max"]),
                         b_init=float(sv["b_init"]))
    xs = cfg["values"]["x"]
    xs = np.linspace(0.0, 2.0 * max(sol.b_star, 0.5), 21) if xs is None else np.asarray(xs, float)
    b_eval = sol.b_star if (sol.b_star > 0 or spec.model.bounded_variation) else sol.bracket[1]
    est = ss.estimate_value(spec, b_eval, xs, batch)
    me.write_csv(out / "values.csv", ["x", "value", "ci_half"],
                 zip(est.x, est.value, est.half_width))
    me.write_csv(out / "g_history.csv", ["b", "g_hat"], sorted(sol.history))
    summary["results"] = {
        "b_star": sol.b_star,
        "bracket": list(sol.bracket),
        "g_at_b_star": sol.g_at_bstar.value,
        "g_ci_half": sol.g_at_bstar.half_width,
        "zero_barrier_reason": sol.zero_barrier_reason,
        "zero_barrier_criterion": ss.zero_barrier_criterion(spec),
        "n_evaluations": sol.n_evaluations,
    }
    summary["truncation_bounds"] = _bounds(spec, batch.horizon, b_eval)


def cmd_g_curve(cfg, out, threads, summary):
    grid = _barrier_grid(cfg["scan"])
    spec, batch = _single_setup(cfg, threads)
    est = ss.g_curve(spec, grid, batch)
    me.write_csv(out / "g_curve.csv", ["b", "g_hat", "ci_half", "censored_fraction"],
                 [(e.b, e.value, e.half_width, e.censored_fraction) for e in est])
    summary["results"] = {"n_barriers": len(est), "g_min": min(e.value for e in est),
                          "g_max": max(e.value for e in est)}
    summary["truncation_bounds"] = _bounds(spec, batch.horizon, float(grid.max()) or None)


def cmd_oracle_check(cfg, out, threads, summary):
    spec, batch = _single_setup(cfg, threads)
    if spec.model.jumps:
        raise ValidationError([], "oracle-check needs a model without jumps")
    d = oracle.DiffusionSpec.from_problem(spec)
    b_or = oracle.oracle_bstar(d, spec.beta, spec.r, spec.payoff)
    sv = cfg["solver"]
    sol = ss.solve_bstar(spec, batch, tol_b=float(sv["tol_b"]), b_max=float(sv["b_max"]))
    hjb = oracle.solve_hjb_ode(d, spec.beta, spec.r, spec.payoff, b_or, right_bc="smooth")
    xs = cfg["values"]["x"]
    xs = np.linspace(0.0, b_or, 11)[1:-1] if xs is None else np.asarray(xs, float)
    est = ss.estimate_value(spec, sol.b_star, xs, batch)
    ref = hjb(xs)
    me.write_csv(out / "oracle.csv", ["x", "mc_value", "ci_half", "oracle_value"],
                 zip(xs, est.value, est.half_width, ref))
    scale = float(np.max(np.abs(hjb.v)))
    summary["results"] = {
        "oracle_b_star": b_or,
        "mc_b_star": sol.b_star,
        "b_star_error": abs(sol.b_star - b_or),
        "g_ci_half": sol.g_at_bstar.half_width,
        "max_value_error_rel_sup": float(np.max(np.abs(est.value - ref)) / scale),
        "hjb_residual": hjb.residual,
        "hjb_condition": hjb.condition,
    }
    summary["truncation_bounds"] = _bounds(spec, batch.horizon, sol.b_star)


def _solve_map(cfg, threads):
    m = build_map(cfg)
    seed, n, dt, horizon, bridge = _mc(cfg)
    sv, mcfg, gcfg = cfg["solver"], cfg["map"], cfg["grid"]
    batches = me.simulate_state_batches(m, dt, horizon, n, seed, threads=threads, bridge=bridge)
    b0 = None if mcfg["b0"] is None else np.asarray(mcfg["b0"], float)
    if b0 is not None and b0.shape != (m.n_states,):
        raise ConfigError("[map] b0 must have one barrier per state", "CONFIG_TYPE")
    guess = me.initial_guess(m, batches)
    upper = gcfg["upper"]
    if upper is None:
        upper = 5.0 * max(float(guess.max()), 0.0 if b0 is None else float(b0.max()), 0.2)
    knots = me.make_knots(float(upper), int(gcfg["n_knots"]), float(gcfg["power"]))
    if mcfg["init"] == "barrier":
        start = guess if b0 is None else b0
        f0 = me.policy_evaluate(start, m, batches, knots)[0].project(m.beta)
    elif mcfg["init"] == "identity":
        f0 = me.ValueGrid.affine(knots, np.zeros(m.n_states))
    else:
        raise ConfigError("[map] init must be 'barrier' or 'identity'", "CONFIG_TYPE")
    V, b_star, trace = me.fixed_point_iterate(
        m, f0, batches, tol=float(sv["tol_b"]), max_iter=int(sv["max_iter"]), scheme=sv["scheme"],
        b0=b0 if mcfg["init"] == "barrier" else None, bisect_tol=float(sv["bisect_tol"]),
        projection_tol=float(sv["projection_tol"]),
    )
    return m, batches, knots, V, b_star, trace


def _map_summary(m, batches, knots, V, b_star, trace, horizon):
    T = me.apply_T(b_star, V, m, batches, project=False)
    resid = np.abs(T.grid.values - V.values)
    se = T.half_width / ss.Z95
    bounds = []
    hat, _ = me.hat_grid(V, m)
    for i in range(m.n_states):
        spec = me.state_problem(m, i, me._payoff(hat.table(i)))
        bounds.append(_bounds(spec, horizon, float(b_star[i])))
    return {
        "b_star": b_star,
        "K": trace.K,
        "scheme": trace.scheme,
        "iterations": trace.rows[-1].n,
        "barrier_steps": trace.barrier_steps(),
        "step_ratios": trace.step_ratios(),
        "fixed_point_residual": float(resid.max()),
        "fixed_point_residual_over_se": float(np.max(resid / np.maximum(se, 1e-300))),
        "value_at_zero": V.values[:, 0],
    }, {"per_state": bounds}, T


def cmd_solve_map(cfg, out, threads, summary):
    m, batches, knots, V, b_star, trace = _solve_map(cfg, threads)
    header, rows = me.trace_rows(trace, m.n_states)
    me.write_csv(out / "trace.csv", header, rows)
    res, bounds, T = _map_summary(m, batches, knots, V, b_star, trace, batches[0].horizon)
    header, rows = me.value_grid_rows(V, T.half_width)
    me.write_csv(out / "value_grid.csv", header, rows)
    summary["results"] = res
    summary["truncation_bounds"] = bounds
    return m, batches, knots, V, b_star


def cmd_sweep_barrier(cfg, out, threads, summary):
    sw = cfg["sweep"]
    if sw["barriers"] is None and int(sw["n"]) < 1:
        raise ConfigError("sweep grid is empty", "CONFIG_EMPTY_GRID")
    if sw["barriers"] is not None and any(len(g) == 0 for g in sw["barriers"]):
        raise ConfigError("sweep grid is empty", "CONFIG_EMPTY_GRID")
    if sw["method"] not in ("policy", "direct"):
        raise ConfigError("[sweep] method must be 'policy' or 'direct'", "CONFIG_TYPE")
    m, batches, knots, V, b_star = cmd_solve_map(cfg, out, threads, summary)
    seed, n, dt, horizon, _ = _mc(cfg)
    sweeps = {}
    for i in range(m.n_states):
        if sw["barriers"] is not None:
            grid = np.asarray(sw["barriers"][i], float)
        else:
            grid = b_star[i] * np.linspace(float(sw["lo"]), float(sw["hi"]), int(sw["n"]))
        grid = grid[grid <= knots[-1]]
        if grid.size == 0:
            raise ConfigError(f"sweep grid for state {i} is empty inside the knot range", "CONFIG_EMPTY_GRID")
        paths = me.simulate_map(m, dt, horizon, n, seed, initial_state=i) if sw["method"] == "direct" else None
        rows = me.barrier_sweep(m, batches, knots, b_star, i, grid, float(sw["x"]), sw["method"], paths)
        k = int(np.argmax(rows[:, -2]))
        fixed = [f"fixed_b_{j}" for j in range(m.n_states) if j != i]
        me.write_csv(out / f"sweep_state{i}.csv", ["swept_b", *fixed, "value", "ci_half", "is_argmax"],
                     [(*r, int(j == k)) for j, r in enumerate(rows)])
        nearest = int(np.argmin(np.abs(grid - b_star[i])))
        sweeps[f"state_{i}"] = {"argmax_b": float(grid[k]), "argmax_index": k, "b_star_index": nearest,
                                "index_distance": abs(k - nearest)}
    summary["results"]["sweep"] = sweeps


HANDLERS = {
    "paths": cmd_paths,
    "solve-single": cmd_solve_single,
    "g-curve": cmd_g_curve,
    "oracle-check": cmd_oracle_check,
    "solve-map": cmd_solve_map,
    "sweep-barrier": cmd_sweep_barrier,
}
SOLVER_CODES = {"NO_UPPER_BRACKET", "MAX_ITER_EXCEEDED", "NO_ROOT", "SINGULAR_BVP", "QUADRATURE_FAILURE",
                "CLASS_D_VIOLATION"}


def run(command, cfg, out_dir, threads=1):
    """Run one command; returns the exit status.  ``summary.json`` is always written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"command": command, "inputs": cfg, "status": "ok"}
    start = time.perf_counter()
    code = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            _set_threads(threads)
            HANDLERS[command](cfg, out, threads, summary)
        except BailoutError as exc:
            code = 3 if exc.code in SOLVER_CODES else 2
            summary["status"] = "error"
            summary["error"] = {"code": exc.code, "message": str(exc)}
            trace = getattr(exc, "trace", None)
            if trace is not None:
                header, rows = me.trace_rows(trace, len(trace.rows[-1].b))
                me.write_csv(out / "trace.csv", header, rows)
        except OSError as exc:
            code = 2
            summary["status"] = "error"
            summary["error"] = {"code": "IO_ERROR", "message": f"{exc.filename}: {exc.strerror}"}
    grouped = {}
    for w in caught:
        if issubclass(w.category, DeprecationWarning) or "numba" in str(w.filename):
            continue
        key = getattr(w.category, "code", w.category.__name__)
        entry = grouped.setdefault(key, {"code": key, "count": 0, "first": str(w.message)})
        entry["count"] += 1
    summary["warnings"] = [grouped[k] for k in sorted(grouped)]
    summary["runtime"] = {"seconds": time.perf_counter() - start, "threads": threads}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(_clean(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return code


def main(argv=None):
    ap = argparse.ArgumentParser(prog="bailout", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out")
    ap.add_argument("--threads", type=int)
    args = ap.parse_args(argv)
    threads = args.threads or int(os.environ.get("BAILOUT_THREADS", "1") or 1)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"bailout: {exc.code}: {exc}", file=sys.stderr)
        out = Path(args.out or "out")
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump({"command": args.command, "status": "error",
                       "error": {"code": exc.code, "message": str(exc)}}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return 2
    if cfg["command"] is not None and cfg["command"] != args.command:
        print(f"bailout: config is for {cfg['command']!r}, not {args.command!r}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg["mc"]["seed"] = args.seed
    out = args.out or cfg["output"]["directory"]
    code = run(args.command, cfg, out, threads)
    if code:
        with open(Path(out) / "summary.json", encoding="utf-8") as fh:
            err = json.load(fh).get("error", {})
        print(f"bailout: {err.get('code')}: {err.get('message')}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
