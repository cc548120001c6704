"""Command-line front end: ``mpct {design,simulate,doa,solve,bench} CONFIG``.

Exit codes: 0 when everything is certified and every solve succeeded, 2 for
an uncertified design, an unreachable reference or an infeasible closed-loop
solve, 1 for schema or I/O errors.
"""
from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import tempfile
from dataclasses import dataclass, fields
from pathlib import Path

import jsonschema
import numpy as np

from mpct import formulations as fm
from mpct.design import TrackingDesign, validate_assumption1, validate_assumption2, validate_economic
from mpct.errors import ConfigError, InfeasibleAtStep, MPCTError, UnreachableReference
from mpct.model import LinearSystem, Polytope, ReferenceSchedule, Zonotope, steady_state_manifold
from mpct.solver import SolverSettings, admm_solve
from mpct.solver.types import SOLVED

EXIT_OK, EXIT_ERROR, EXIT_UNCERTIFIED = 0, 1, 2

_MATRIX = {"oneOf": [{"type": "number"}, {"type": "array"}]}
_VECTOR = {"type": "array", "items": {"type": "number"}}

_SETTINGS_PROPS = {f.name: {} for f in fields(SolverSettings)}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema", "system", "constraints", "design", "formulation"],
    "properties": {
        "schema": {"const": 1},
        "name": {"type": "string"},
        "system": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["A", "B", "C", "D"],
                 "properties": {k: _MATRIX for k in "ABCD"}},
                {"type": "object", "additionalProperties": False, "required": ["file"],
                 "properties": {"file": {"type": "string"}}},
            ]
        },
        "constraints": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["lower", "upper"],
                 "properties": {"lower": _VECTOR, "upper": _VECTOR}},
                {"type": "object", "additionalProperties": False, "required": ["F", "g"],
                 "properties": {"F": _MATRIX, "g": _VECTOR}},
            ]
        },
        "design": {
            "type": "object",
            "additionalProperties": False,
            "required": ["Q", "R", "N"],
            "properties": {
                **{k: _MATRIX for k in ("Q", "R", "S", "T", "S_u", "T_h", "S_h", "P", "K", "K_bar")},
                "N": {"type": "integer", "minimum": 1},
                "sigma": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "omega": {"type": "number", "exclusiveMinimum": 0},
                "gamma": {"type": "number", "minimum": 0},
                "offset_norm": {"type": "number", "minimum": 0},
            },
        },
        "formulation": {
            "type": "object",
            "additionalProperties": False,
            "required": ["tag"],
            "properties": {
                "tag": {"enum": list(fm.TAGS)},
                "tau": {"type": "integer", "minimum": 1},
                "W": {
                    "type": "object", "additionalProperties": False, "required": ["lower", "upper"],
                    "properties": {"lower": _VECTOR, "upper": _VECTOR},
                },
                "bounds": {
                    "type": "object", "additionalProperties": False, "required": ["Cz", "Dz", "y_low", "y_high"],
                    "properties": {"Cz": _MATRIX, "Dz": _MATRIX, "y_low": _VECTOR, "y_high": _VECTOR},
                },
                "economic": {
                    "type": "object", "additionalProperties": False, "required": ["H_e"],
                    "properties": {"H_e": _MATRIX},
                },
                "eps_alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "solver": {"type": "object", "additionalProperties": False, "properties": _SETTINGS_PROPS},
        "schedule": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["kind", "times", "values"],
                 "properties": {"kind": {"const": "piecewise"}, "times": {"type": "array", "items": {"type": "integer"}},
                                "values": {"type": "array"}}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "samples"],
                 "properties": {"kind": {"const": "periodic"}, "samples": {"type": "array"}}},
            ]
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "T": {"type": "integer", "minimum": 1},
                "x0": _VECTOR,
                "seed": {"type": "integer", "minimum": 0},
                "n_seeds": {"type": "integer", "minimum": 1},
                "tolerance": {"type": "number", "exclusiveMinimum": 0},
                "n_samples": {"type": "integer", "minimum": 1},
                "grid": {
                    "type": "object", "additionalProperties": False, "required": ["ranges", "step"],
                    "properties": {
                        "ranges": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                              "minItems": 2, "maxItems": 2}},
                        "step": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
                "doa_controllers": {"type": "array", "items": {"enum": [fm.STAN, fm.LIN_MPCT, fm.EQU_MPCT]}},
                "doa_reference": _VECTOR,
            },
        },
        "output": {"type": "string"},
    },
}


def _mat(v):
    return np.atleast_2d(np.asarray(v, dtype=float))


def _vec(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


CONFIG_DIR = Path(__file__).parent / "configs"


def shipped_configs():
    """Names of the example configs bundled with the package."""
    return sorted(p.stem for p in CONFIG_DIR.glob("*.json") if not p.stem.endswith("_system"))


def resolve_config(source):
    """``source`` itself if it exists, else the bundled config of that name."""
    path = Path(source)
    if not path.exists():
        for cand in (CONFIG_DIR / path.name, CONFIG_DIR / f"{path.name}.json"):
            if cand.exists() and str(source) == path.name:
                return cand
    return path


def load_config(source):
    """Parse and schema-validate a config given as a path, a bundled name or a dict.

    Relative ``system.file`` references resolve against the config's directory.
    """
    base = Path(".")
    if isinstance(source, (str, os.PathLike)):
        source = resolve_config(source)
        base = source.parent
        try:
            with open(source) as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
    else:
        cfg = source
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected: {exc.message} at {list(exc.absolute_path)}") from exc
    if "file" in cfg["system"]:
        path = base / cfg["system"]["file"]
        try:
            with open(path) as fh:
                sysd = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read system file {path}: {exc}") from exc
        cfg = {**cfg, "system": sysd}
    return cfg


@dataclass
class Experiment:
    """Objects built from a validated config."""

    config: dict
    sys: LinearSystem
    Z: Polytope
    design: TrackingDesign
    settings: SolverSettings | None
    schedule: ReferenceSchedule | None

    @classmethod
    def from_config(cls, cfg):
        try:
            s = cfg["system"]
            sys = LinearSystem(_mat(s["A"]), _mat(s["B"]), _mat(s["C"]), _mat(s["D"]))
            c = cfg["constraints"]
            Z = Polytope.box(c["lower"], c["upper"]) if "lower" in c else Polytope(_mat(c["F"]), _vec(c["g"]))
            if Z.dim != sys.nx + sys.nu:
                raise ConfigError(f"constraint set has dimension {Z.dim}, expected nx + nu = {sys.nx + sys.nu}")
            d = dict(cfg["design"])
            for k, v in d.items():
                if k not in ("N", "sigma", "omega", "gamma", "offset_norm"):
                    d[k] = _mat(v)
            design = TrackingDesign(**d)
            settings = SolverSettings.from_dict(cfg["solver"]) if "solver" in cfg else None
            schedule = ReferenceSchedule.from_dict(cfg["schedule"]) if "schedule" in cfg else None
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(cfg, sys, Z, design, settings, schedule)

    @property
    def tag(self):
        return self.config["formulation"]["tag"]

    @property
    def run(self):
        return self.config.get("run", {})

    def disturbance_set(self):
        W = self.config["formulation"].get("W")
        return None if W is None else Zonotope.from_box(W["lower"], W["upper"])

    def controller(self, tag=None):
        f = self.config["formulation"]
        tag = tag or self.tag
        kw = {}
        if tag == fm.ROBUST_MPCT:
            kw["W"] = self.disturbance_set()
            if "eps_alpha" in f:
                kw["eps_alpha"] = f["eps_alpha"]
        if tag == fm.PERIODIC_MPCT:
            kw["tau"] = f.get("tau")
        if tag == fm.HMPC and "bounds" in f:
            b = f["bounds"]
            kw["bounds"] = (_mat(b["Cz"]), _mat(b["Dz"]), _vec(b["y_low"]), _vec(b["y_high"]))
        if tag == fm.ECON_MPCT and "economic" in f:
            kw["elleco"] = fm.EconomicCost(_mat(f["economic"]["H_e"]))
        return fm.make_controller(tag, self.sys, self.design, self.Z, **kw)

    def output_dir(self, override=None):
        out = Path(override or self.config.get("output", "out"))
        out.mkdir(parents=True, exist_ok=True)
        return out


def _write(path: Path, text: str):
    """Write ``text`` atomically (temp file in the same directory, then rename)."""
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _dump(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------- commands


def cmd_design(exp: Experiment, out: Path, log=print):
    """Design artifacts and validation report; returns the exit code."""
    run = exp.run
    n_samples, seed = run.get("n_samples", 10_000), run.get("seed", 0)
    try:
        spec = exp.controller()
    except MPCTError as exc:
        log(f"design failed: {type(exc).__name__}: {exc}")
        _write(out / "validation.json", _dump({"certified": False, "error": f"{type(exc).__name__}: {exc}"}))
        return EXIT_UNCERTIFIED
    design = spec.design
    reports = {}
    if spec.tag == fm.ROBUST_MPCT:
        rep = validate_assumption2(exp.sys, design, spec.sets["W"], spec.sets["rpi"], spec.sets["Xt_bar"],
                                   spec.sets["Z_bar"], n_samples=n_samples, seed=seed)
    else:
        Xt = spec.sets.get("Xt")
        if Xt is None and spec.tag in (fm.STAN, fm.EQU_MPCT, fm.PERIODIC_MPCT, fm.HMPC, fm.ECON_MPCT):
            from mpct.setops import invariant_set_for_tracking

            Xt = invariant_set_for_tracking(exp.sys, design.K, exp.Z, design.sigma)
        rep = validate_assumption1(exp.sys, design, Xt, exp.Z, n_samples=n_samples, seed=seed)
        reports["Xt"] = Xt.to_dict()
    if spec.tag == fm.ECON_MPCT and exp.schedule is not None:
        theta = exp.schedule.at(0)
        xs, us = spec.econ_setpoint(theta)
        econ = validate_economic(exp.sys, design, steady_state_manifold(exp.sys, exp.Z, design.sigma), xs, us)
        for c in econ.checks:
            rep.checks.append(c)
    if spec.tag == fm.ROBUST_MPCT:
        reports["rpi"] = spec.sets["rpi"].to_dict()
        reports["Xt_bar"] = spec.sets["Xt_bar"].to_dict()
        reports["Z_bar"] = spec.sets["Z_bar"].to_dict()
    _write(out / "design.json", _dump(design.to_dict()))
    _write(out / "sets.json", _dump(reports))
    _write(out / "validation.json", _dump(rep.to_dict()))
    for c in rep.checks:
        log(f"{'ok  ' if c.passed else 'FAIL'} {c.name} (margin {c.margin:.3g}) {c.detail}")
    log("certified" if rep.certified else "NOT certified")
    return EXIT_OK if rep.certified else EXIT_UNCERTIFIED


def _target(spec, exp, schedule, T):
    """Oracle target for the convergence report: a point, or a per-step trajectory for periodic runs."""
    d = spec.design
    ref = schedule.at(T - 1)
    if spec.tag == fm.PERIODIC_MPCT:
        tau = spec.extras["tau"]
        ya, _, _ = fm.optimal_periodic_reference(exp.sys, exp.Z, d.sigma, tau, schedule.window(0, tau), S=d.S)
        return None, np.array([ya[t % tau] for t in range(T)])
    if spec.tag == fm.ECON_MPCT:
        xs, us = spec.econ_setpoint(ref)
        return exp.sys.output(xs, us), None
    if spec.tag in (fm.EQU_MPCT, fm.HMPC):
        xr, ur = fm.target_from_output(exp.sys, ref)
        xs, us = fm.optimal_steady_state(exp.sys, exp.Z, d.sigma, xr, ur, d.T, d.S_u)
        return exp.sys.output(xs, us), None
    Z = spec.sets["Z_bar"] if spec.tag == fm.ROBUST_MPCT else exp.Z
    ya, _, _ = fm.optimal_reachable_reference(exp.sys, Z, d.sigma, ref, S=d.S)
    return ya, None


def cmd_simulate(exp: Experiment, out: Path, log=print):
    if exp.schedule is None:
        raise ConfigError("simulate needs a schedule")
    run = exp.run
    T = run.get("T", 100)
    x0 = _vec(run.get("x0", np.zeros(exp.sys.nx)))
    seed = run.get("seed", 0)
    n_seeds = run.get("n_seeds", 1)
    tol = run.get("tolerance", 1e-3)
    try:
        spec = exp.controller()
        target, traj = _target(spec, exp, exp.schedule, T)
    except UnreachableReference as exc:
        log(f"unreachable reference: {exc}")
        return EXIT_UNCERTIFIED
    from mpct import sim

    settings = exp.settings or sim.CLOSED_LOOP_SETTINGS
    W = exp.disturbance_set() if spec.tag == fm.ROBUST_MPCT else None
    target_set = None
    if W is not None:
        phi = spec.sets["rpi"].set
        target_set = phi.linear_map(exp.sys.C + exp.sys.D @ spec.design.K)
    code = EXIT_OK
    summary = []
    for k in range(n_seeds):
        s = seed + k
        dist = (W, s) if W is not None else None
        try:
            trace = sim.run_closed_loop(spec, x0, exp.schedule, T, dist, settings)
        except InfeasibleAtStep as exc:
            trace = exc.trace
            code = EXIT_UNCERTIFIED
            log(f"seed {s}: infeasible solve at step {exc.step}")
        except UnreachableReference as exc:
            # a later schedule value can be out of reach for the regulation controller
            log(f"unreachable reference: {exc}")
            return EXIT_UNCERTIFIED
        rep = sim.convergence_report(trace, target, tol, Z=exp.Z, target_set=target_set,
                                     target_traj=None if traj is None else traj[: trace.steps])
        rep["seed"] = s
        rep["target"] = None if target is None else np.atleast_1d(target).tolist()
        summary.append(rep)
        suffix = "" if n_seeds == 1 else f"_seed{s}"
        _write(out / f"trace{suffix}.csv", trace.to_csv())
        log(f"seed {s}: steps={rep['steps']} settling={rep['settling_time']} "
            f"offset={rep['terminal_offset']:.3e} violations={rep['violations']}")
        if rep["violations"]:
            code = EXIT_UNCERTIFIED
    _write(out / "report.json", _dump({"tag": spec.tag, "runs": summary}))
    return code


def cmd_doa(exp: Experiment, out: Path, log=print):
    from mpct import sim

    run = exp.run
    grid = run.get("grid")
    if grid is None:
        raise ConfigError("doa needs run.grid")
    tags = run.get("doa_controllers", [fm.STAN, fm.LIN_MPCT])
    ref = _vec(run.get("doa_reference", np.zeros(exp.sys.ny)))
    maps = {}
    try:
        for tag in tags:
            spec = exp.controller(tag)
            if tag == fm.STAN:
                spec.stan_terminal_set(ref)
            if any(hi < lo for lo, hi in grid["ranges"]):
                axes = [np.zeros(0)] * len(grid["ranges"])
                maps[tag] = sim.DoAMap(axes, np.zeros([0] * len(axes), bool), tag)
            else:
                maps[tag] = sim.doa_scan(spec, grid["ranges"], grid["step"], ref, exp.settings)
    except UnreachableReference as exc:
        log(f"unreachable reference: {exc}")
        return EXIT_UNCERTIFIED
    summary = {"counts": {t: m.count for t, m in maps.items()}, "undecided": {t: m.undecided for t, m in maps.items()}}
    for t, m in maps.items():
        _write(out / f"doa_{t}.csv", m.to_csv())
        log(f"{t}: {m.count} feasible of {m.feasible.size}")
    if fm.STAN in maps and fm.LIN_MPCT in maps:
        a, b = maps[fm.STAN], maps[fm.LIN_MPCT]
        summary["subset"] = a.subset_of(b)
        summary["superset"] = bool(summary["subset"] and b.count > a.count)
        log(f"stan subset of lin: {summary['subset']}, strictly larger: {summary['superset']}")
    _write(out / "doa_summary.json", _dump(summary))
    return EXIT_OK


def cmd_solve(exp: Experiment, out: Path, log=print, dump_qp=False):
    """Build the program at ``x0`` for the first reference, solve it once and report."""
    run = exp.run
    x0 = _vec(run.get("x0", np.zeros(exp.sys.nx)))
    try:
        spec = exp.controller()
        sched = exp.schedule or ReferenceSchedule.constant(np.zeros(exp.sys.ny))
        prog = spec.build(x0, spec.reference(sched, 0))
    except UnreachableReference as exc:
        log(f"unreachable reference: {exc}")
        return EXIT_UNCERTIFIED
    if dump_qp:
        _write(out / "program.json", _dump(prog.to_dict()))
    from mpct.sim import CLOSED_LOOP_SETTINGS

    res, _ = admm_solve(prog, exp.settings or CLOSED_LOOP_SETTINGS)
    info = {k: v for k, v in res.info.items()}
    _write(out / "solution.json", _dump({
        "status": res.status, "iterations": res.iterations, "objective": res.objective,
        "r_prim": res.r_prim, "r_dual": res.r_dual, "z": res.z, "info": info,
    }))
    log(f"{prog.kind} n={prog.n}: {res.status} in {res.iterations} iterations, objective {res.objective:.10g}")
    return EXIT_OK if res.status == SOLVED else EXIT_UNCERTIFIED


def cmd_bench(exp: Experiment, out: Path, log=print, horizons=(5, 10, 20, 40), n_iter=200):
    from mpct.bench import format_rows, kernel_benchmark

    def build(N):
        d = TrackingDesign(**{**exp.design.to_dict(), "N": int(N)})
        spec = fm.make_controller(fm.EQU_MPCT, exp.sys, d, exp.Z)
        sched = exp.schedule or ReferenceSchedule.constant(np.zeros(exp.sys.ny))
        return spec.build(np.zeros(exp.sys.nx), sched.at(0))

    rows = kernel_benchmark(build, horizons, n_iter=n_iter)
    _write(out / "bench.json", _dump(rows))
    log(format_rows(rows))
    return EXIT_OK


COMMANDS = {"design": cmd_design, "simulate": cmd_simulate, "doa": cmd_doa, "solve": cmd_solve, "bench": cmd_bench}


def build_parser():
    p = argparse.ArgumentParser(prog="mpct", description="MPC for tracking: design, simulate, scan, solve.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "design": "compute terminal/tube sets and validate the design assumptions",
        "simulate": "closed-loop simulation; writes trace CSV and a convergence report",
        "doa": "feasibility grid scan per controller; writes DoA CSVs and a subset summary",
        "solve": "build and solve one controller program at x0",
        "bench": "time the compiled kernel against the pure-Python fallback",
    }
    for name, h in helps.items():
        sp_ = sub.add_parser(name, help=h)
        sp_.add_argument("config", help="experiment config (JSON, schema 1) or the name of a bundled one")
        sp_.add_argument("-o", "--output", help="output directory (overrides the config)")
        sp_.add_argument("-q", "--quiet", action="store_true", help="no progress output")
        if name == "solve":
            sp_.add_argument("--dump-qp", action="store_true", help="also write the program as program.json")
        if name == "bench":
            sp_.add_argument("--horizons", type=int, nargs="+", default=[5, 10, 20, 40])
            sp_.add_argument("--iterations", type=int, default=200)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    log = (lambda *a, **k: None) if args.quiet else print
    try:
        exp = Experiment.from_config(load_config(args.config))
        out = exp.output_dir(args.output)
        kw = {}
        if args.command == "solve":
            kw["dump_qp"] = args.dump_qp
        if args.command == "bench":
            kw.update(horizons=args.horizons, n_iter=args.iterations)
        return COMMANDS[args.command](exp, out, log=log, **kw)
    except ConfigError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=_sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    _sys.exit(main())
