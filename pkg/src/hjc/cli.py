"""``hjc`` command-line front end.

Exit codes: 0 success, 1 numerical or solver failure (including failed
assumption checks), 2 configuration or usage error.
"""
from __future__ import annotations

import argparse
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from . import __version__
from .config import PRESETS, build_initial, build_model, load_config, resolve_factory
from .constrained import default_sample_points, residuals, solve_constrained
from .errors import ConfigurationError, HJCError
from .model import validate_assumptions
from .quadratic import QuadraticProblem, solve_quadratic_system
from .viscous import concentration_diagnostics, simulate_sweep, sweep_configs

log = logging.getLogger("hjc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ output


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in np.atleast_2d(np.asarray(rows, dtype=float)):
        buf.write(",".join("%.17g" % v for v in row) + "\n")
    _atomic_write(path, buf.getvalue())


def write_json(path, obj):
    _atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _error_record(exc):
    rec = {"error": type(exc).__name__, "message": str(exc)}
    if getattr(exc, "residual", None) is not None:
        rec["residual"] = exc.residual
    return rec


# ------------------------------------------------------------------ config


def _load(args):
    if args.preset:
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        if args.config:
            raise UsageError("give either a config file or --preset, not both")
        cfg = PRESETS[args.preset]()
    elif args.config:
        try:
            cfg = load_config(args.config)
        except FileNotFoundError as exc:
            raise UsageError(f"config file not found: {args.config}") from exc
    else:
        raise UsageError("a config file (or --preset) is required")
    raw = cfg.model_dump()
    if args.delta is not None:
        raw["solver"]["delta"] = args.delta
    if args.tol is not None:
        raw["solver"]["tol"] = args.tol
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out_dir is not None:
        raw["out_dir"] = args.out_dir
    cfg = type(cfg).model_validate(raw)
    return cfg


def _format_validation_error(exc):
    lines = []
    for err in exc.errors():
        key = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"{key}: {err['msg']}")
    return "invalid configuration:\n  " + "\n  ".join(lines)


def _validation_box(cfg, model, data):
    if cfg.validation.box is not None:
        return cfg.validation.box
    centre = np.zeros(model.dim)
    half = 3.0 * max(np.abs(data.xbar0).max(), np.abs(model.peak()).max()) + 3.0
    return [(c - half, c + half) for c in centre]


def _run_validation(cfg, model, data, out):
    report = validate_assumptions(model, data, _validation_box(cfg, model, data),
                                  samples=cfg.validation.samples, seed=cfg.seed)
    write_json(out / "validation.json", report.to_dict())
    _atomic_write(out / "validation.txt", str(report) + "\n")
    return report


# ---------------------------------------------------------------- commands


def cmd_validate(cfg, args):
    out = Path(cfg.out_dir)
    report = _run_validation(cfg, build_model(cfg), build_initial(cfg), out)
    print(report)
    return EXIT_OK if report.passed else EXIT_FAIL


def _solve_and_write(cfg, model, data, out):
    sol = solve_constrained(model, data, cfg.solver.T, cfg.solver.options(),
                            box=cfg.validation.box)
    samples = default_sample_points(sol, seed=cfg.seed)
    rep = residuals(sol, sample_points=samples, every=cfg.solver.residual_every)
    d = sol.dim
    eig = np.linalg.eigvalsh(sol.hess_at_xbar)
    rows = np.column_stack([sol.t, sol.xbar, sol.I, eig, rep.R_per_time,
                            rep.grad_per_time, rep.value_per_time])
    header = (["t"] + [f"xbar_{i}" for i in range(d)] + ["I"]
              + [f"hess_eig_{i}" for i in range(d)] + ["res_R", "res_grad", "res_maxu"])
    write_csv(out / "solution.csv", header, rows)
    return sol, rep


def cmd_solve(cfg, args):
    out = Path(cfg.out_dir)
    model, data = build_model(cfg), build_initial(cfg)
    if not args.skip_validate:
        report = _run_validation(cfg, model, data, out)
        if not report.passed:
            print(report, file=sys.stderr)
            print("assumption checks failed; rerun with --skip-validate to force", file=sys.stderr)
            return EXIT_FAIL
    try:
        sol, rep = _solve_and_write(cfg, model, data, out)
    except ConfigurationError:
        raise
    except HJCError as exc:
        write_json(out / "summary.json", {"status": "failed", **_error_record(exc)})
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    summary = {
        "status": "ok",
        **sol.summary(),
        "residuals": rep.to_dict(),
        "traces": [tr.to_dict() for tr in sol.traces],
    }
    write_json(out / "summary.json", summary)
    print(json.dumps(_jsonable({k: summary[k] for k in ("T", "xbar_T", "I_T", "halvings")})))
    return EXIT_OK


def cmd_oracle(cfg, args):
    out = Path(cfg.out_dir)
    if cfg.model.family != "quadratic" or cfg.initial.family != "quadratic":
        raise UsageError("the oracle needs quadratic model and initial data")
    model, data = build_model(cfg), build_initial(cfg)
    try:
        prob = QuadraticProblem.from_model(model, data)
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from exc
    try:
        sol = solve_constrained(model, data, cfg.solver.T, cfg.solver.options())
        orc = solve_quadratic_system(prob, cfg.solver.T, cfg.oracle.dt, cfg.oracle.quad_nodes)
    except ConfigurationError:
        raise
    except HJCError as exc:
        write_json(out / "oracle_summary.json", {"status": "failed", **_error_record(exc)})
        print(f"solver failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    t = sol.t
    xo = np.asarray(orc.xbar_at(t)).reshape(t.size, -1)
    Io = np.asarray(orc.I_at(t))
    dx = np.abs(sol.xbar - xo)
    dI = np.abs(sol.I - Io)
    d = sol.dim
    header = (["t"] + [f"xbar_{i}" for i in range(d)] + [f"xbar_oracle_{i}" for i in range(d)]
              + [f"xbar_diff_{i}" for i in range(d)] + ["I", "I_oracle", "I_diff"])
    write_csv(out / "oracle.csv", header,
              np.column_stack([t, sol.xbar, xo, dx, sol.I, Io, dI]))
    worst = float(max(dx.max(), dI.max()))
    summary = {
        "status": "ok" if worst <= cfg.oracle.tolerance else "mismatch",
        "max_xbar_diff": float(dx.max()),
        "max_I_diff": float(dI.max()),
        "tolerance": cfg.oracle.tolerance,
        "oracle_dt": cfg.oracle.dt,
        "xbar_T": sol.xbar[-1],
        "I_T": float(sol.I[-1]),
        "oracle_xbar_T": orc.xbar[-1],
        "oracle_I_T": float(orc.I[-1]),
    }
    write_json(out / "oracle_summary.json", summary)
    print(json.dumps(_jsonable({k: summary[k] for k in ("status", "max_xbar_diff", "max_I_diff")})))
    return EXIT_OK if worst <= cfg.oracle.tolerance else EXIT_FAIL


def _reference(cfg, model, data, T):
    """Constrained solution used as reference for the viscous runs."""
    if cfg.model.family == "quadratic" and cfg.initial.family == "quadratic":
        try:
            prob = QuadraticProblem.from_model(model, data)
        except ConfigurationError:
            prob = None
        if prob is not None:
            return solve_quadratic_system(prob, T, cfg.oracle.dt, cfg.oracle.quad_nodes)
    return solve_constrained(model, data, T, cfg.solver.options(), box=cfg.validation.box)


def cmd_viscous(cfg, args):
    out = Path(cfg.out_dir)
    vs = cfg.viscous
    if not vs.epsilons:
        raise UsageError("viscous.epsilons is empty")
    model, data = build_model(cfg), build_initial(cfg)
    if model.dim > 2:
        raise UsageError("viscous runs are limited to d <= 2")
    psi = resolve_factory(vs.psi) if vs.psi else None
    configs = sweep_configs(vs.epsilons, vs.bounds, vs.h, dt=vs.dt, psi=psi, form=vs.form,
                            cfl_fraction=vs.cfl_fraction, snapshot_every=vs.dump_every)
    try:
        ref = _reference(cfg, model, data, vs.T)
        runs = simulate_sweep(model, data, configs, vs.T)
    except ConfigurationError:
        raise
    except HJCError as exc:
        write_json(out / "viscous_summary.json", {"status": "failed", **_error_record(exc)})
        print(f"viscous run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    finals = []
    d = model.dim
    for cfg_i, run in zip(configs, runs):
        diag = concentration_diagnostics(run, ref, data)
        tag = f"eps_{cfg_i.epsilon:g}"
        header = (["t", "I_eps"] + [f"argmax_{i}" for i in range(d)]
                  + ["max_eps_log_n", "argmax_error", "I_error", "rho_hat", "rho"])
        rows = np.column_stack([run.t, run.I_eps, run.argmax, run.max_u, diag.argmax_error,
                                diag.I_error, diag.rho_hat, diag.rho])
        write_csv(out / f"viscous_{tag}.csv", header, rows)
        for snap in run.snapshots:
            fields = run.field_rows(snap)
            write_csv(out / f"field_{tag}_t{snap.t:.6f}.csv",
                      [f"x_{i}" for i in range(d)] + ["value"], fields)
        finals.append({**diag.final(), "dt": cfg_i.dt, "h": cfg_i.h})
    order = sorted(finals, key=lambda f: -f["epsilon"])
    trend = {
        key: all(b[key] < a[key] for a, b in zip(order, order[1:]))
        for key in ("I_error", "argmax_error")
    }
    summary = {"status": "ok", "T": vs.T, "runs": finals, "decreasing_with_epsilon": trend}
    write_json(out / "viscous_summary.json", summary)
    print(json.dumps(_jsonable({"runs": [{k: f[k] for k in ("epsilon", "I_error", "argmax_error")}
                                         for f in finals], "decreasing_with_epsilon": trend})))
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "oracle": cmd_oracle,
            "viscous": cmd_viscous}


def build_parser():
    p = argparse.ArgumentParser(prog="hjc", description="Constrained Hamilton-Jacobi solver.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("config", nargs="?", help="JSON run configuration")
    p.add_argument("--out-dir", default=None, help="output directory (default: config value, 'out')")
    p.add_argument("--preset", default=None, help="use a built-in configuration (canonical)")
    p.add_argument("--skip-validate", action="store_true", help="solve even if assumption checks fail")
    p.add_argument("--delta", type=float, default=None, help="interval length override")
    p.add_argument("--tol", type=float, default=None, help="fixed-point tolerance override")
    p.add_argument("--seed", type=int, default=None, help="seed for sampled checks")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load(args)
        if args.preset:
            write_json(Path(cfg.out_dir) / "config.json", cfg.model_dump(mode="json"))
        return COMMANDS[args.command](cfg, args)
    except ValidationError as exc:
        print(_format_validation_error(exc), file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except HJCError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
