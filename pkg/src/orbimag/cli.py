"""Command line interface: ``orbimag {check,solve,scan,reduce,verify}``.

Runs are driven by one JSON config (``--config``); unknown keys are rejected.
``--out``, ``--seed`` and ``--threads`` override the config. Verbosity comes
from the ``ORBIMAG_LOG`` environment variable (a logging level name).

Config keys and defaults::

    model              "hopf" | "spindle" | "exact_product"    ("hopf")
    p, q               spindle weights                          (2, 3)
    B                  exact_product field strength             (1.0)
    metric_corruption  negative-control metric defect           (0.0)
    k                  energy value                             (1.0)
    k_grid             list, or {"start", "stop", "num"}        (0.6 .. 2.0, 10 points)
    path_class         "vertical" (S_k) | "energy" (E)          ("vertical")
    N, P, sweeps       path loops, path nodes, deformation sweeps (32, 24, 10)
    N_final            nodes of the polished critical loop      (256)
    scheme             "spectral" | "link"                      ("spectral")
    flow               FlowParams overrides                     ({})
    checks             subset of invariant names, or null       (null)
    reduce             {"duration", "h", "order", "samples", "start"}
    solution           loop CSV for ``verify``                   (null)
    seed               integer seed                             (0)
    out                output directory                         ("runs")

Outputs (all under ``out``; CSVs carry a ``#`` metadata block, JSONs a
``meta`` key, both with the code version and config hash):

    check   check.json: {"model", "passed", "invariants": [{name, value, tol,
            samples, note, passed}, ...]}
    solve   solution.csv (t, q_*, phi_*) + solution.json (T, k, kind, c, ...),
            solve_report.json, geodesic.csv (s, x_*) when certified
    scan    scan.csv (k, c_k, status, T, kbar, grad_norm), scan_report.json,
            loops/k_<i>.csv
    reduce  trajectory.csv (t, q_*, p_*, H, A_*), chart.csv (t, y_*, ychart_*),
            reduce_report.json
    verify  verify_report.json (includes "pass"), geodesic.csv
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import re
import sys
from enum import IntEnum
from pathlib import Path

log = logging.getLogger("orbimag.cli")


class ExitCode(IntEnum):
    OK = 0
    INVARIANT_FAILED = 1
    CONFIG_ERROR = 2
    NOT_CONVERGED = 3
    VERIFICATION_FAILED = 4
    MOMENT_CONSTRAINT = 5
    CONSTRAINT_DRIFT = 6
    NOT_CRITICAL = 7
    NUMERICAL_ERROR = 8
    IO_ERROR = 9


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": "hopf",
    "p": 2,
    "q": 3,
    "B": 1.0,
    "metric_corruption": 0.0,
    "k": 1.0,
    "k_grid": {"start": 0.6, "stop": 2.0, "num": 10},
    "path_class": "vertical",
    "N": 32,
    "P": 24,
    "sweeps": 10,
    "N_final": 256,
    "scheme": "spectral",
    "flow": {},
    "checks": None,
    "reduce": {"duration": None, "h": 0.005, "order": 4, "samples": None, "start": "auto"},
    "solution": None,
    "seed": 0,
    "out": "runs",
}

_NUM = (int, float)
TYPES = {
    "model": str, "p": int, "q": int, "B": _NUM, "metric_corruption": _NUM, "k": _NUM,
    "k_grid": (list, dict), "path_class": str, "N": int, "P": int, "sweeps": int, "N_final": int,
    "scheme": str, "flow": dict, "checks": (list, type(None)), "reduce": dict,
    "solution": (str, type(None)), "seed": int, "out": str,
}
FLOW_KEYS = {"delta", "eps", "T_min", "T_max", "step", "max_steps", "grad_tol", "metric", "monotone_tol"}
REDUCE_KEYS = set(DEFAULTS["reduce"])
CHOICES = {
    "model": ("hopf", "spindle", "exact_product"),
    "path_class": ("vertical", "energy"),
    "scheme": ("spectral", "link"),
}


# -- config ---------------------------------------------------------------------

def _key_position(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    if m is None:
        return ""
    line = text.count("\n", 0, m.start()) + 1
    col = m.start() - text.rfind("\n", 0, m.start())
    return f":{line}:{col}"


def load_config(path=None, text=None) -> dict:
    """Parse and validate a config; raises ConfigError with file:line:col context."""
    src = "<config>"
    if path is not None:
        src = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"{src}: cannot read config: {exc}") from exc
    raw = {}
    if text is not None and text.strip():
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{src}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{src}: top level must be a JSON object")
    text = text or ""

    def fail(key, msg):
        raise ConfigError(f"{src}{_key_position(text, key)}: key {key!r}: {msg}")

    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in DEFAULTS:
            fail(key, "unknown key")
        want = TYPES[key]
        if isinstance(val, bool) and want is not bool or not isinstance(val, want):
            fail(key, f"expected {want}, got {type(val).__name__}")
        if key in CHOICES and val not in CHOICES[key]:
            fail(key, f"must be one of {CHOICES[key]}")
        if key == "flow":
            for sub in val:
                if sub not in FLOW_KEYS:
                    fail(sub, "unknown key in 'flow'")
        if key == "reduce":
            for sub in val:
                if sub not in REDUCE_KEYS:
                    fail(sub, "unknown key in 'reduce'")
            val = {**DEFAULTS["reduce"], **val}
        if key == "k_grid" and isinstance(val, dict) and set(val) != {"start", "stop", "num"}:
            fail(key, "needs exactly start, stop, num")
        cfg[key] = val
    for key in ("N", "P", "N_final", "sweeps"):
        if cfg[key] < 1:
            fail(key, "must be positive")
    return cfg


def k_grid(cfg):
    import numpy as np

    g = cfg["k_grid"]
    if isinstance(g, dict):
        return [float(x) for x in np.linspace(g["start"], g["stop"], int(g["num"]))]
    return [float(x) for x in g]


def build_model(cfg):
    from . import bundle

    return bundle.make_model(cfg["model"], p=cfg["p"], q=cfg["q"], B=cfg["B"],
                             metric_corruption=cfg["metric_corruption"])


def flow_params(cfg):
    from .solver import FlowParams

    return FlowParams(**cfg["flow"])


# -- commands ------------------------------------------------------------------------

def cmd_check(cfg, out: Path, meta) -> int:
    from . import invariants as iv
    from . import persist

    model = build_model(cfg)
    res = iv.run_suite(model, seed=cfg["seed"], checks=cfg["checks"])
    ok = all(r.passed for r in res)
    for r in res:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} value={r.value:.3e} tol={r.tol:.0e}")
    persist.write_json(out / "check.json",
                       {"model": model.name, "passed": ok, "invariants": [r.to_dict() for r in res]}, meta)
    return ExitCode.OK if ok else ExitCode.INVARIANT_FAILED


def _certify(model, cfg_loop, kind, k, scheme):
    from . import verify as vf

    if kind == "energy":
        return vf.check_closed_geodesic(model, cfg_loop, scheme)
    return vf.project_and_check(model, cfg_loop, k, scheme)


def _save_geodesic(path, model, cfg_loop, k, scheme, meta):
    import numpy as np

    from . import persist
    from . import verify as vf

    geo = vf.reconstruct_geodesic(model, cfg_loop, k, scheme)
    cols = ["s"] + [f"x_{i + 1}" for i in range(geo.x.shape[1])]
    persist.write_table(path, cols, np.column_stack([geo.s, geo.x]), meta)


def cmd_solve(cfg, out: Path, meta) -> int:
    from . import persist
    from . import solver as so

    model = build_model(cfg)
    kind, k, scheme = cfg["path_class"], float(cfg["k"]), cfg["scheme"]
    path = so.build_path_class(model, kind, N=cfg["N"], P=cfg["P"], k=k)
    res = so.mountain_pass(model, path, k, flow_params(cfg), sweeps=cfg["sweeps"], N_final=cfg["N_final"],
                           scheme=scheme)
    print(f"{res.status}: c={res.c:.12g} grad={res.grad_norm:.2e} T={res.config.T:.10g}")
    persist.save_loop(out / "solution.csv", res.config, meta, k=k, kind=kind, model=model.name, c=res.c,
                      status=res.status, scheme=scheme)
    report = {"k": k, "kind": kind, "c": res.c, "status": res.status, "grad_norm": res.grad_norm,
              "T": res.config.T, "path_max": res.path_max, "margin_ok": res.margin_ok,
              "crossing_ok": res.crossing_ok, "gauge_shift": res.gauge_shift, "history": res.history}
    code = ExitCode.OK
    if res.status != "converged":
        code = ExitCode.NOT_CONVERGED
    else:
        rep = _certify(model, res.config, kind, k, scheme)
        report["verification"] = rep.to_dict()
        if not rep.passed:
            code = ExitCode.VERIFICATION_FAILED
        elif kind == "vertical":
            _save_geodesic(out / "geodesic.csv", model, res.config, k, scheme, meta)
    persist.write_json(out / "solve_report.json", report, meta)
    return code


def cmd_scan(cfg, out: Path, meta) -> int:
    import numpy as np

    from . import persist
    from . import solver as so
    from . import verify as vf

    model = build_model(cfg)
    grid = k_grid(cfg)
    scheme = cfg["scheme"]
    path = so.build_path_class(model, "vertical", N=cfg["N"], P=cfg["P"], k=min(grid))

    def certified(m, c, k):
        return vf.project_and_check(m, c, k, scheme, charts=False).passed

    rows, dq = so.k_scan(model, path, grid, flow_params(cfg), verify_fn=certified, sweeps=cfg["sweeps"],
                         N_final=cfg["N_final"], scheme=scheme)
    for i, r in enumerate(rows):
        print(f"k={r['k']:.6g} c={r['c_k']:.12g} {r['status']} verified={r['verified']}")
        persist.save_loop(out / "loops" / f"k_{i:03d}.csv", r["result"].config, meta, k=r["k"], kind="vertical",
                          model=model.name, c=r["c_k"], status=r["status"], scheme=scheme)
    persist.save_scan(out / "scan.csv", rows, meta)
    cs = np.array([r["c_k"] for r in rows])
    eps = [flow_params(cfg).eps_for(r["k"]) for r in rows]
    monotone = bool(np.all(np.diff(cs) >= -1e-6))
    above = bool(np.all(cs >= np.array(eps)))
    persist.write_json(out / "scan_report.json", {
        "rows": [{k: v for k, v in r.items() if k != "result"} | {"margin_ok": r["result"].margin_ok}
                 for r in rows],
        "difference_quotients": dq, "nondecreasing": monotone, "above_eps": above, "eps": eps,
    }, meta)
    if not all(r["status"] == "converged" for r in rows):
        return ExitCode.NOT_CONVERGED
    if not (monotone and above and all(r["verified"] for r in rows)):
        return ExitCode.VERIFICATION_FAILED
    return ExitCode.OK


def _reduce_start(model, cfg, rng):
    from . import invariants as iv
    from . import reduction as rd

    start = cfg["reduce"]["start"]
    k = float(cfg["k"])
    if start == "auto":
        start = "hopf_circle" if model.name == "hopf" else "random"
    if start == "hopf_circle":
        if model.name != "hopf":
            raise ConfigError("reduce.start 'hopf_circle' needs model 'hopf'")
        return rd.hopf_circle_state(model, k), rd.hopf_circle_period(k)
    if start == "random":
        return iv.moment_state(model, rng, k), 1.0
    raise ConfigError(f"reduce.start must be 'auto', 'hopf_circle' or 'random', got {start!r}")


def cmd_reduce(cfg, out: Path, meta) -> int:
    import numpy as np

    from . import persist
    from . import reduction as rd

    model = build_model(cfg)
    rng = np.random.default_rng(cfg["seed"])
    state, period = _reduce_start(model, cfg, rng)
    rc = cfg["reduce"]
    duration = float(rc["duration"] or period)
    rt = rd.round_trip(model, state, duration, h=float(rc["h"]), order=int(rc["order"]), samples=rc["samples"])
    persist.save_trajectory(out / "trajectory.csv", rt.trajectory, meta)
    persist.write_table(out / "chart.csv", ["t", "y_1", "y_2", "ychart_1", "ychart_2"],
                        np.column_stack([rt.trajectory.t, rt.y_projected, rt.y_chart]), meta)
    report = {"model": model.name, "chart": rt.chart, "duration": duration, "distance": rt.distance,
              "H": rt.H, "kbar": rt.kbar, "energy_defect": rt.energy_defect, "H_drift": rt.H_drift,
              "A_drift": rt.A_drift}
    persist.write_json(out / "reduce_report.json", report, meta)
    print(f"chart={rt.chart} distance={rt.distance:.3e} H={rt.H:.12g} kbar={rt.kbar:.12g} "
          f"energy_defect={rt.energy_defect:.2e}")
    return ExitCode.OK if rt.distance <= 1e-4 and rt.energy_defect <= 1e-8 else ExitCode.VERIFICATION_FAILED


def cmd_verify(cfg, out: Path, meta) -> int:
    from . import persist

    if cfg["solution"] is None:
        raise ConfigError("verify needs the 'solution' key (path to a loop CSV)")
    model = build_model(cfg)
    loop, side = persist.load_loop(cfg["solution"])
    kind = side.get("kind", cfg["path_class"])
    k = float(side.get("k", cfg["k"]))
    scheme = side.get("scheme", cfg["scheme"])
    rep = _certify(model, loop, kind, k, scheme)
    d = rep.to_dict()
    persist.write_json(out / "verify_report.json", {"k": k, "kind": kind, "solution": cfg["solution"], **d}, meta)
    if kind == "vertical":
        _save_geodesic(out / "geodesic.csv", model, loop, k, scheme, meta)
    print(f"pass={rep.passed}" + ("" if rep.passed else f" failures={getattr(rep, 'failures', lambda: [])()}"))
    return ExitCode.OK if rep.passed else ExitCode.VERIFICATION_FAILED


COMMANDS = {"check": cmd_check, "solve": cmd_solve, "scan": cmd_scan, "reduce": cmd_reduce, "verify": cmd_verify}


# -- entry point -----------------------------------------------------------------------

def _error_code(exc) -> ExitCode:
    names = {
        "ConfigError": ExitCode.CONFIG_ERROR,
        "MomentConstraintError": ExitCode.MOMENT_CONSTRAINT,
        "ConstraintDriftError": ExitCode.CONSTRAINT_DRIFT,
        "NotCriticalError": ExitCode.NOT_CRITICAL,
    }
    for cls in type(exc).__mro__:
        if cls.__name__ in names:
            return names[cls.__name__]
    if isinstance(exc, OSError):
        return ExitCode.IO_ERROR
    return ExitCode.NUMERICAL_ERROR


def build_parser():
    ap = argparse.ArgumentParser(prog="orbimag", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="JSON config file")
    ap.add_argument("--out", type=Path, help="output directory (overrides config 'out')")
    ap.add_argument("--seed", type=int, help="random seed (overrides config 'seed')")
    ap.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("orbimag: --threads must be positive", file=sys.stderr)
        return ExitCode.CONFIG_ERROR
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(args.threads)
    level = os.environ.get("ORBIMAG_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            cfg["seed"] = args.seed
        if args.out is not None:
            cfg["out"] = str(args.out)
        from . import persist

        out = Path(cfg["out"])
        hashed = {k: v for k, v in cfg.items() if k != "out"}
        meta = persist.metadata(hashed, command=args.command, seed=cfg["seed"])
        log.info("running %s into %s", args.command, out)
        return int(COMMANDS[args.command](cfg, out, meta))
    except Exception as exc:  # every failure maps to a named exit code
        code = _error_code(exc)
        print(f"orbimag: {code.name}: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return int(code)


if __name__ == "__main__":
    sys.exit(main())
