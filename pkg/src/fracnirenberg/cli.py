"""Command-line front end.

    fracnirenberg [--config FILE] [--out DIR] [--threads K] [--seed S] COMMAND [--key value ...]

Every command writes its artifacts plus ``manifest.json`` into the output
directory. Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
from typing import List, Optional

import numpy as np
import scipy
from threadpoolctl import threadpool_info, threadpool_limits

from . import __version__
from .config import COMMANDS, SCHEMA, ConfigError, ExperimentSpec, parse_config
from .constants import critical_exponent, make_constants, multiplier
from .errors import DomainError, ResolutionError, ShapeError, SingularityError, SolverFailure

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


def _fmt(x) -> str:
    return f"{float(x):.17g}"


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _grid(p):
    from .sphere_spectral import SphereGrid

    if p.get("grid", "zonal") == "full":
        return SphereGrid.full(p["kmax"] + 1, 2 * p["kmax"] + 2)
    return SphereGrid.zonal(p["n"], p["kmax"] + 1)


def _bubble(p, grid):
    from .exact_solutions import BubbleParams, bubble_function, south_pole

    return bubble_function(grid, BubbleParams("sphere", south_pole(p["n"]), p["lambda"], p["sigma"]))


def _node_rows(grid, *cols):
    pts = grid.points.reshape(-1, grid.n + 1)
    flat = [np.asarray(c).ravel() for c in cols]
    for i in range(pts.shape[0]):
        yield [i, *pts[i], *(c[i] for c in flat)]


def _coord_header(n):
    return [f"xi{j + 1}" for j in range(n + 1)]


# --------------------------------------------------------------------------- commands
def cmd_eigs(p, out):
    k = np.arange(p["kmax"] + 1)
    lam = multiplier(k, p["n"], p["sigma"])
    _write_csv(os.path.join(out, "eigs.csv"), ["k", "lambda"], zip(k, lam))
    return {"kmax": p["kmax"]}


def cmd_apply(p, out):
    from .fractional_ops import apply_psigma_integral, apply_psigma_spectral
    from .kfunctions import parse_k

    grid = _grid(p)
    if p["field"] == "bubble":
        v = _bubble(p, grid)
    else:
        v = parse_k(p["field"], p["n"]).sphere_function(grid)
    spec = apply_psigma_spectral(v, p["sigma"]).values.ravel()
    pts = grid.points.reshape(-1, grid.n + 1)
    picks = np.unique(np.linspace(0, pts.shape[0] - 1, p["points"]).round().astype(int))
    rows = []
    for i in picks:
        integ = apply_psigma_integral(v, p["sigma"], pts[i])
        rows.append([i, *pts[i], v.values.ravel()[i], spec[i], integ])
    _write_csv(os.path.join(out, "apply.csv"), ["node"] + _coord_header(grid.n) + ["value", "spectral", "integral"],
               rows)
    gap = max(abs(r[-1] - r[-2]) for r in rows) / max(abs(r[-2]) for r in rows)
    return {"max_relative_gap": gap}


def cmd_verify_bubble(p, out):
    from .solver import SolverConfig, residual

    grid = _grid(p)
    v = _bubble(p, grid)
    cfg = SolverConfig(p["n"], p["sigma"], 1.0, 0.0, p["kmax"], grid_kind=p["grid"])
    res = residual(v, cfg).values
    c = make_constants(p["n"], p["sigma"]).c_n_sigma
    rel = np.abs(res) / (c * v.values ** cfg.p)
    _write_csv(os.path.join(out, "bubble_residual.csv"),
               ["node"] + _coord_header(grid.n) + ["v", "residual", "relative_residual"],
               _node_rows(grid, v.values, res, rel))
    summary = {"max_relative_residual": float(np.max(rel)), "max_abs_residual": float(np.max(np.abs(res)))}
    _write_json(os.path.join(out, "summary.json"), summary)
    return summary


def cmd_kw(p, out):
    from .identities import kazdan_warner
    from .kfunctions import parse_k

    grid = _grid(p)
    K = parse_k(p["K"], p["n"]).sphere_function(grid)
    rep = kazdan_warner(K, _bubble(p, grid), p["sigma"])
    _write_json(os.path.join(out, "kw.json"), rep.to_dict())
    return rep.to_dict()


def cmd_pohozaev(p, out):
    from .exact_solutions import flat_bubble_profile
    from .extension import FlatField, HalfSpaceGrid, poisson_extend
    from .identities import pohozaev

    n, s = p["n"], p["sigma"]
    a = make_constants(n, s).a_liouville
    u = FlatField.radial(n, flat_bubble_profile(p["lambda"], n, s, a))
    Rmax = max(p["radii"])
    grid = HalfSpaceGrid.radial_grid(n, s, R=max(2 * Rmax, p["T"]), nr=9, T=max(p["T"], Rmax), J=p["J"])
    U = poisson_extend(u, grid, s)
    pexp = critical_exponent(n, s) - p["p_offset"]
    reps = []
    for R in p["radii"]:
        d = pohozaev(U, 1.0, R, pexp).to_dict()
        d["R"] = R
        d["relative_defect"] = abs(d["sum"]) / d["scale"] if d["scale"] else 0.0
        reps.append(d)
    _write_json(os.path.join(out, "pohozaev.json"), {"p": pexp, "reports": reps})
    return {"max_relative_defect": max(r["relative_defect"] for r in reps)}


def cmd_extend(p, out):
    from .exact_solutions import flat_bubble_profile
    from .extension import FlatField, HalfSpaceGrid, neumann_trace, poisson_extend

    n, s = p["n"], p["sigma"]
    a = make_constants(n, s).a_liouville
    u = FlatField.radial(n, flat_bubble_profile(p["lambda"], n, s, a))
    grid = HalfSpaceGrid.radial_grid(n, s, R=p["R"], nr=p["nr"], T=p["T"], J=p["J"])
    U = poisson_extend(u, grid, s)
    U.to_csv(os.path.join(out, "extension.csv"))
    r = grid.x_axes[0]
    tr = np.asarray(U.trace)
    nt = neumann_trace(U, levels=3)
    _write_csv(os.path.join(out, "neumann_trace.csv"), ["r", "u", "u_pow_p", "neumann"],
               zip(r, tr, tr ** critical_exponent(n, s), nt))
    return {"points": int(U.values.size)}


def _guess(p):
    from .exact_solutions import BubbleParams, south_pole

    g = p["guess"]
    if g == "constant":
        return None
    if g.startswith("bubble:"):
        return BubbleParams("sphere", south_pole(p["n"]), float(g.split(":", 1)[1]), p["sigma"])
    try:
        return float(g)
    except ValueError:
        raise ConfigError(f"guess must be 'constant', 'bubble:<lambda>' or a number, got {g!r}") from None


def cmd_solve(p, out):
    from .solver import SolverConfig, newton_solve, residual

    cfg = SolverConfig(p["n"], p["sigma"], p["K"], p["tau"], p["kmax"], p["newton_tol"], p["newton_max_iter"],
                       p["damping"], _guess(p), p["grid"])
    r = newton_solve(cfg)
    res = residual(r.v, cfg).values
    _write_csv(os.path.join(out, "solution.csv"), ["node"] + _coord_header(p["n"]) + ["v", "residual"],
               _node_rows(r.v.grid, r.v.values, res))
    _write_json(os.path.join(out, "result.json"), r.to_dict())
    return r.to_dict()


def cmd_blowup_study(p, out):
    from .solver import (SolverConfig, blowup_diagnostics, continuation, family_rows,
                         write_family_csv)

    cfg = SolverConfig(p["n"], p["sigma"], p["K"], p["tau_schedule"][0], p["kmax"], p["newton_tol"],
                       peak_factor=p["peak_factor"], separation=p["R"])
    fam = continuation(cfg, p["tau_schedule"])
    diags = [blowup_diagnostics(r, cfg, p["epsilon"], p["R"]) for r in fam]
    write_family_csv(os.path.join(out, "family.csv"), family_rows(fam, diags))
    body = {"diagnostics": [dict(d.to_dict(), tau=r.tau) for r, d in zip(fam, diags)],
            "failure": None if fam.failure is None else str(fam.failure)}
    _write_json(os.path.join(out, "diagnostics.json"), body)
    if fam.failure is not None:
        raise fam.failure
    return {"members": len(fam)}


def cmd_star_check(p, out):
    from .identities import star_condition
    from .kfunctions import parse_k

    K = parse_k(p["K"], p["n"])
    rep = star_condition(K, p["beta"], r_max=p["r_max"], n_shells=p["shells"], n_dir=p["directions"])
    _write_json(os.path.join(out, "star.json"), rep.to_dict())
    return {"L_ratio": rep.L_ratio, "L_holder": rep.L_holder}


HANDLERS = {"eigs": cmd_eigs, "apply": cmd_apply, "verify-bubble": cmd_verify_bubble, "kw": cmd_kw,
            "pohozaev": cmd_pohozaev, "extend": cmd_extend, "solve": cmd_solve,
            "blowup-study": cmd_blowup_study, "star-check": cmd_star_check}


# --------------------------------------------------------------------------- run / main
def effective_threads(requested: int) -> int:
    """Thread limit actually applied: never above the pools' current size.

    Growing an OpenBLAS pool past its start-up size is unsafe on some
    builds, so --threads only ever lowers the limit.
    """
    sizes = [lib["num_threads"] for lib in threadpool_info()] or [1]
    return max(1, min(requested, min(sizes), os.cpu_count() or 1))


def manifest(spec: ExperimentSpec) -> dict:
    return {"command": spec.command, "parameters": spec.parameters, "version": __version__,
            "threads_effective": effective_threads(spec.parameters["threads"]),
            "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _error_record(kind, exc, code):
    return {"error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}


def run(spec: ExperimentSpec) -> int:
    """Execute a validated spec; returns the process exit status."""
    out = spec.parameters["out"]
    try:
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "manifest.json"), manifest(spec))
    except OSError as exc:
        return _fail(None, "io", exc, EXIT_IO)
    try:
        with threadpool_limits(limits=effective_threads(spec.parameters["threads"])):
            summary = HANDLERS[spec.command](spec.parameters, out)
    except (ConfigError, DomainError, ShapeError) as exc:
        return _fail(out, "validation", exc, EXIT_VALIDATION)
    except (SolverFailure, ResolutionError, SingularityError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(out, "numerical", exc, EXIT_NUMERICAL)
    except OSError as exc:
        return _fail(out, "io", exc, EXIT_IO)
    print(json.dumps({"command": spec.command, "status": "ok", "summary": summary}, sort_keys=True, default=str))
    return EXIT_OK


def _fail(out, kind, exc, code) -> int:
    rec = _error_record(kind, exc, code)
    if isinstance(exc, SolverFailure):
        rec["history"] = [float(h) for h in exc.history]
    if out is not None:
        try:
            _write_json(os.path.join(out, "error.json"), rec)
        except OSError:
            pass
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", default=argparse.SUPPRESS, help="YAML parameter file")
    glob.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    glob.add_argument("--threads", default=argparse.SUPPRESS, help="BLAS/OpenMP thread limit")
    glob.add_argument("--seed", default=argparse.SUPPRESS, help="seed for randomized checks (u64)")
    parser = argparse.ArgumentParser(prog="fracnirenberg", parents=[glob],
                                     description="Fractional Nirenberg problem toolkit")
    sub = parser.add_subparsers(dest="command", required=False)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[glob])
        for key in SCHEMA[name]:
            sp.add_argument(f"--{key}", dest=key, default=None)
        for key in ("n", "sigma"):
            sp.add_argument(f"--{key}", dest=key, default=None)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    cfg_path = args.pop("config", None)
    text = None
    if cfg_path is not None:
        try:
            with open(cfg_path) as fh:
                text = fh.read()
        except OSError as exc:
            return _fail(None, "io", exc, EXIT_IO)
    try:
        spec = parse_config(command, text, args)
    except ConfigError as exc:
        return _fail(None, "validation", exc, EXIT_VALIDATION)
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
