"""Command-line entry point: ``ruelle-lab <task> --config cfg.json [--set k=v ...]``.

Each task reads a validated config, runs one computation and writes
``report.json`` (plus task-specific CSV files) into the output directory.
Exit codes:

    0  success
    2  invalid configuration
    3  non-convergence (extrapolation residual, integrator, dispersal)
    4  threshold violated (no multiplier at the requested Re lambda)
    5  rational fit diverged
    6  verification failed or monotonicity violated
    7  other numerical failure (bad bracket, unsupported observable, ...)
    8  input/output failure
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys as _sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import ConfigInvalid, IoFailure, RuelleLabError, VerificationFailed
from .resolvent import (
    ContourSpec,
    ObservablePair,
    correlation,
    correlation_quadrature,
    pole_scan,
)
from .symbols import (
    BumpSpec,
    GridSpec,
    build_multiplier,
    build_weight,
    dual_subspace_samples,
    threshold_by_bisection,
)
from .thresholds import threshold_halfplane
from .verify import SUITE, run_suite

log = logging.getLogger("ruelle_lab")


# ---------------------------------------------------------------------------
# deterministic serialization
# ---------------------------------------------------------------------------


def _fmt_float(x):
    x = float(x)
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    text = format(x, ".17g")
    if all(c not in text for c in ".eE"):
        text += ".0"
    return text


def _escape(s):
    return json.dumps(s, ensure_ascii=True)


def dumps(obj, indent=0):
    """JSON text with sorted keys and floats at 17 significant digits."""
    pad, inner = "  " * indent, "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_escape(str(k))}: {dumps(obj[k], indent + 1)}" for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(dumps(v, indent + 1) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + dumps(v, indent + 1) for v in seq) + "\n" + pad + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return "[" + _fmt_float(obj.real) + ", " + _fmt_float(obj.imag) + "]"
    return _escape(str(obj))


def _csv_cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def emit_report(out_dir, report, tables=None):
    """Write report.json and one CSV per table; returns the written paths."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / "report.json"
        path.write_text(dumps(report) + "\n")
        written.append(path)
        for name, (header, rows) in (tables or {}).items():
            p = out / name
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(header)
                for row in rows:
                    w.writerow([_csv_cell(v) for v in row])
            written.append(p)
    except OSError as exc:
        raise IoFailure(f"cannot write reports to {out}: {exc}") from exc
    return written


# ---------------------------------------------------------------------------
# tasks
# ---------------------------------------------------------------------------


def _task_threshold(cfg, sys, lift, threads):
    p = cfg["task_params"]
    res = threshold_halfplane(
        sys, lift, p["m_u"], p["m_s"], tuple(p["horizons"]), p["samples"], cfg["seed"],
        p["fiber_samples"], p["residual_ceiling"],
    )
    rows = []
    for est in (res.estimate_u, res.estimate_s):
        rows.extend([est.side, est.m, h, r] for h, r in zip(est.horizons, est.sup_rates))
    return res.to_dict(), {"sup_rates.csv": (["side", "m", "horizon", "sup_rate"], rows)}


def _task_weight(cfg, sys, lift, threads):
    p = cfg["task_params"]
    grid = GridSpec(p["n_base"], p["n_fiber"], p["n_dir"], p["include_exact"], cfg["seed"])
    w = build_weight(
        sys, (p["m_u"], p["m_0"], p["m_s"]), BumpSpec(p["r_inner"], p["r_outer"]), p["T_avg"], grid,
        p["h_fd"], p["tol"],
    )
    nb = w.bases.shape[1]
    header = [f"b{i + 1}" for i in range(nb)] + ["s"] + [f"xi{i}" for i in range(sys.dim)]
    header += ["weight", "hp_weight"]
    result = w.to_dict()
    result["declared_grid_size"] = grid.size
    return result, {"weight_grid.csv": (header, list(w.rows()))}


def _task_multiplier(cfg, sys, lift, threads):
    p = cfg["task_params"]
    pts = dual_subspace_samples(sys, p["side"], p["samples"], p["fiber_samples"], cfg["seed"])
    mf = build_multiplier(lift, sys, p["side"], p["m"], p["lambda_re"], pts, p["panels_per_unit"],
                          p["t_min"], p["t_max"])
    rows = []
    for i, (q, W, D) in enumerate(zip(mf.sample_points, mf.matrices, mf.diff_matrices)):
        Wh, Dh = 0.5 * (W + W.conj().T), 0.5 * (D + D.conj().T)
        rows.append([i, *q.x.base_array, q.x.s, float(np.linalg.eigvalsh(Wh).min()),
                     float(np.linalg.eigvalsh(Dh).max())])
    nb = len(mf.sample_points[0].x.base_array) if mf.sample_points else 2
    header = ["index"] + [f"b{i + 1}" for i in range(nb)] + ["s", "min_eig_w", "max_eig_generator_w"]
    return mf.to_dict(), {"multiplier_samples.csv": (header, rows)}


def _task_bisection(cfg, sys, lift, threads):
    p = cfg["task_params"]
    pts = dual_subspace_samples(sys, p["side"], p["samples"], p["fiber_samples"], cfg["seed"])
    crit = threshold_by_bisection(lift, sys, p["side"], p["m"], tuple(p["bracket"]), p["tol"], pts,
                                  p["t_max"])
    return {"side": p["side"], "m": p["m"], "threshold": crit, "bracket": p["bracket"],
            "tol": p["tol"], "samples": len(pts)}, {}


def _pair(cfg, lift):
    p = cfg["task_params"]
    f = cfgmod.observable(p["f"], "/task_params/f")
    g = cfgmod.observable(p["g"], "/task_params/g")
    return ObservablePair(f, g, lift)


def _task_resonance(cfg, sys, lift, threads):
    p = cfg["task_params"]
    c = {**cfgmod.TASK_DEFAULTS["resonance"]["contour"], **p["contour"]}
    rep = pole_scan(_pair(cfg, lift), sys, ContourSpec(c["re"], c["im_max"], c["n"], c["re_min"]),
                    p["degree"], p["residue_floor"], p["fit_ceiling"])
    samples = [[z.real, z.imag, v.real, v.imag] for z, v in zip(rep.lambda_samples, rep.values)]
    poles = [[q.real, q.imag, r.real, r.imag] for q, r in zip(rep.poles, rep.residues)]
    return rep.to_dict(), {
        "laplace_samples.csv": (["re_lambda", "im_lambda", "re_F", "im_F"], samples),
        "poles.csv": (["re_pole", "im_pole", "re_residue", "im_residue"], poles),
    }


def _task_correlation(cfg, sys, lift, threads):
    p = cfg["task_params"]
    pair = _pair(cfg, lift)
    times = [float(t) for t in p["times"]]
    values = [correlation(pair, sys, t) for t in times]
    result = {"times": times, "values": [[v.real, v.imag] for v in values]}
    rows = [[t, v.real, v.imag] for t, v in zip(times, values)]
    if p["quadrature_check"]:
        brute = [correlation_quadrature(pair, sys, t, N=p["grid"]) for t in times]
        dev = max(abs(a - b) for a, b in zip(values, brute))
        result["quadrature_deviation"] = dev
        result["quadrature_tol"] = p["tol"]
        if dev > p["tol"]:
            raise VerificationFailed(f"bookkeeping and quadrature differ by {dev:.3e}")
    return result, {"correlation.csv": (["t", "re", "im"], rows)}


def _task_verify(cfg, sys, lift, threads):
    p = cfg["task_params"]
    unknown = [n for n in p["checks"] if n not in SUITE]
    if unknown:
        raise ConfigInvalid("/task_params/checks", f"unknown check {unknown[0]!r}")
    results = run_suite(p["checks"], threads, p["tolerance_scale"])
    rows = [[r.name, r.value, r.tolerance, r.passed, r.detail] for r in results]
    out = {"checks": [r.to_dict() for r in results], "passed": all(r.passed for r in results)}
    return out, {"checks.csv": (["name", "value", "tolerance", "passed", "detail"], rows)}


TASK_RUNNERS = {
    "threshold": _task_threshold,
    "weight": _task_weight,
    "multiplier": _task_multiplier,
    "bisection": _task_bisection,
    "resonance": _task_resonance,
    "correlation": _task_correlation,
    "verify": _task_verify,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def run(config, overrides=(), output_dir=None, seed=None, threads=1):
    """Validate, run and report.  Returns (exit_code, report dict, output dir).

    Overrides are applied after the base config validates, and the merged
    config is validated again before any computation.
    """
    cfgmod.validate(config)
    merged = cfgmod.apply_overrides(config, overrides)
    if seed is not None:
        merged["seed"] = seed
    if output_dir is not None:
        merged["output_dir"] = str(output_dir)
    cfg = cfgmod.resolve(merged)
    out_dir = Path(cfg["output_dir"])
    sys = cfgmod.build_system(cfg["system"])
    lift = cfgmod.build_lift(cfg["lift"], sys)

    report = {
        "schema_version": cfgmod.SCHEMA_VERSION,
        "task": cfg["task"],
        "seed": cfg["seed"],
        "config": {k: v for k, v in cfg.items() if k != "output_dir"},
    }
    tables = {}
    try:
        result, tables = TASK_RUNNERS[cfg["task"]](cfg, sys, lift, threads)
        report["result"] = result
        code = 0
        if cfg["task"] == "verify" and not result["passed"]:
            failed = [c["name"] for c in result["checks"] if not c["passed"]]
            raise VerificationFailed("failed checks: " + ", ".join(failed))
        report["status"] = "ok"
    except ConfigInvalid:
        raise
    except RuelleLabError as exc:
        code = exc.exit_code
        report["status"] = "error"
        report["error"] = {"type": type(exc).__name__, "message": str(exc), "exit_code": code}
    emit_report(out_dir, report, tables)
    return code, report, out_dir


def _resolve_threads(value):
    if value is not None:
        return value
    env = os.environ.get("RUELLE_LAB_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise ConfigInvalid("", f"RUELLE_LAB_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ConfigInvalid("", "RUELLE_LAB_THREADS must be a positive integer")
    return n


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="JSON experiment config")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted-key override applied after validation (repeatable)")
    common.add_argument("--output-dir", help="directory for report.json and CSV files")
    common.add_argument("--threads", type=int, help="worker threads (fallback: RUELLE_LAB_THREADS)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ruelle-lab", description="Pollicott-Ruelle threshold lab")
    sub = parser.add_subparsers(dest="task", required=True)
    for task in cfgmod.TASKS:
        sub.add_parser(task, parents=[common], help=f"run the {task} task")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is not None and args.threads < 1:
            raise ConfigInvalid("", "--threads must be positive")
        threads = _resolve_threads(args.threads)
        raw = cfgmod.load(args.config)
        if isinstance(raw, dict):
            if "task" in raw and raw["task"] != args.task:
                raise ConfigInvalid("/task", f"config task {raw['task']!r} does not match subcommand {args.task!r}")
            raw = {**raw, "task": args.task}
        code, report, out_dir = run(raw, args.overrides, args.output_dir, args.seed, threads)
    except ConfigInvalid as exc:
        print(f"config error at {exc.pointer or '/'}: {exc.message}", file=_sys.stderr)
        return exc.exit_code
    except RuelleLabError as exc:
        print(f"{type(exc).__name__}: {exc}", file=_sys.stderr)
        return exc.exit_code
    status = report.get("status")
    if code:
        print(f"{report['error']['type']}: {report['error']['message']}", file=_sys.stderr)
    log.info("wrote %s (status %s)", out_dir / "report.json", status)
    print(out_dir / "report.json")
    return code


if __name__ == "__main__":
    raise SystemExit(main())
