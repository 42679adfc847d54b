"""Command-line front end.

Every subcommand reads one YAML config, writes its data to ``--out`` and a
``manifest.json`` next to it, and exits with

    0  ok
    2  config error
    3  numeric failure (including a failed ``check``)
    4  inconclusive classification

Outputs depend only on the config and the seed; nothing time- or host-
dependent goes into the data files.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import subprocess
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from . import __version__
from .blowup import DegenerateC, blow_down, blow_up_i, chart_i_to_ii, chart_ii_to_i
from .chart import (AssumptionAViolated, GenericityViolated, SigmaClass, classify, normal_form_params,
                    wrap)
from .example_kepler import (ExampleParams, NoRootInBracket, ShootingFailed, example_system, run_example,
                             solve_contact_condition)
from .integrate import (CONTACT, SWITCH_PI, IntegratorOptions, NoContact, NotInNeighborhood,
                        StepSizeUnderflow, TolerancesUnachievable, integrate_near_sigma,
                        point_from_state)
from .manifolds import Inconclusive, classify_initial_condition, portrait_sphere, stable_manifold_m0
from .pmp import AdjointVanishes, CotangentPoint, lift_values
from .polyfield import AffineSystem, PolynomialDegreeError, PolynomialSpecError, check_assumption_A

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_INCONCLUSIVE = 0, 2, 3, 4
COMMANDS = ("check", "simulate", "classify", "portrait", "manifold", "example", "blowup")

NUMERIC_ERRORS = (StepSizeUnderflow, TolerancesUnachievable, NotInNeighborhood, NoContact,
                  ShootingFailed, NoRootInBracket, AssumptionAViolated, GenericityViolated,
                  AdjointVanishes, DegenerateC, np.linalg.LinAlgError, FloatingPointError,
                  ArithmeticError)


class ConfigError(ValueError):
    def __init__(self, message, where=None, line=None):
        super().__init__(message)
        self.where = where
        self.line = line

    def as_dict(self):
        return {"error": "ConfigError", "message": str(self), "field": self.where, "line": self.line}


class NonFiniteOutput(ArithmeticError):
    pass


# --- configuration -------------------------------------------------------------------------

SECTION_KEYS = {
    "check": {"samples", "random_samples", "box", "sigma0_point", "tol_A", "tol_gen"},
    "simulate": {"z0"},
    "classify": {"z0"},
    "portrait": {"c", "n", "box", "T", "n_boundary"},
    "manifold": {"c", "eps", "horizon", "R_exit"},
    "example": {"a", "b", "c", "d", "band", "R_seed", "R_contact"},
    "blowup": {"points"},
}
TOP_KEYS = {"schema_version", "system", "tolerances", "seed", *SECTION_KEYS}
TOLERANCE_KEYS = {f.name for f in fields(IntegratorOptions)}


@dataclass
class RunConfig:
    system: Any = "example"            # builtin name or {"drift": ..., "controls": ...}
    tolerances: dict = field(default_factory=dict)
    seed: int = 0
    sections: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_mapping(cls, data) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("the config must be a mapping", "<root>")
        unknown = set(data) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", sorted(unknown)[0])
        if data.get("schema_version") != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION}", "schema_version")
        tol = data.get("tolerances") or {}
        if not isinstance(tol, dict):
            raise ConfigError("tolerances must be a mapping", "tolerances")
        bad = set(tol) - TOLERANCE_KEYS
        if bad:
            raise ConfigError(f"unknown tolerance keys {sorted(bad)}", f"tolerances.{sorted(bad)[0]}")
        sections = {}
        for name, allowed in SECTION_KEYS.items():
            sec = data.get(name)
            if sec is None:
                continue
            if not isinstance(sec, dict):
                raise ConfigError(f"{name} must be a mapping", name)
            bad = set(sec) - allowed
            if bad:
                raise ConfigError(f"unknown keys {sorted(bad)}", f"{name}.{sorted(bad)[0]}")
            sections[name] = dict(sec)
        seed = data.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool):
            raise ConfigError("seed must be an integer", "seed")
        cfg = cls(data.get("system", "example"), dict(tol), seed, sections)
        cfg.options()  # validates tolerances
        cfg.build_system()
        return cfg

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"YAML parse error: {getattr(exc, 'problem', exc)}", "<yaml>",
                              mark.line + 1 if mark else None) from None
        return cls.from_mapping(data if data is not None else {})

    def to_mapping(self) -> dict:
        out = {"schema_version": self.schema_version, "system": self.system,
               "tolerances": dict(self.tolerances), "seed": self.seed}
        out.update(self.sections)
        return out

    def to_text(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=True)

    def digest(self) -> str:
        canon = json.dumps(self.to_mapping(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def options(self, **override) -> IntegratorOptions:
        try:
            return IntegratorOptions(**{**self.tolerances, **override})
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), "tolerances") from None

    def build_system(self) -> AffineSystem:
        if self.system == "example":
            return example_system()
        if isinstance(self.system, str):
            raise ConfigError(f"unknown builtin system {self.system!r}", "system")
        try:
            return AffineSystem.from_spec(self.system)
        except (PolynomialSpecError, PolynomialDegreeError) as exc:
            raise ConfigError(str(exc), getattr(exc, "field", None) or "system") from None

    def section(self, name) -> dict:
        return self.sections.get(name, {})


def _vector(sec, key, n, where):
    if key not in sec:
        raise ConfigError(f"missing {key}", f"{where}.{key}")
    try:
        v = np.asarray(sec[key], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{key} must be a list of numbers", f"{where}.{key}") from None
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ConfigError(f"{key} must hold {n} finite numbers", f"{where}.{key}")
    return v


def _number(sec, key, default, where, positive=False):
    v = sec.get(key, default)
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number", f"{where}.{key}")
    if positive and v <= 0:
        raise ConfigError(f"{key} must be positive", f"{where}.{key}")
    return v


# --- output --------------------------------------------------------------------------------

def version_string() -> str:
    """``git describe``-style version, falling back to the package version."""
    try:
        out = subprocess.run(["git", "describe", "--tags", "--always", "--dirty"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        if not math.isfinite(v):
            raise NonFiniteOutput("non-finite value in output row")
        return format(float(v), ".17g")
    return str(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        if not math.isfinite(obj):
            raise NonFiniteOutput("non-finite value in JSON output")
        return float(obj)
    if isinstance(obj, SigmaClass):
        return obj.value
    return obj


@dataclass
class Result:
    columns: tuple
    rows: list
    summary: dict
    exit_code: int = EXIT_OK


def write_outputs(out: Path, command: str, cfg: RunConfig, res: Result, fmt: str):
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        data_path = out / f"{command}.csv"
        data_path.write_text(render_csv(res.columns, res.rows))
    else:
        data_path = out / f"{command}.json"
        records = [dict(zip(res.columns, r)) for r in res.rows]
        data_path.write_text(json.dumps(_jsonable({"columns": res.columns, "rows": records}),
                                        indent=1, sort_keys=True) + "\n")
    manifest = {"command": command, "version": version_string(), "config_hash": cfg.digest(),
                "seed": cfg.seed, "tolerances": cfg.options().to_dict(), "data": data_path.name,
                "exit_code": res.exit_code, "summary": res.summary}
    (out / "manifest.json").write_text(json.dumps(_jsonable(manifest), indent=1, sort_keys=True) + "\n")


# --- subcommands ---------------------------------------------------------------------------

def cmd_check(cfg: RunConfig) -> Result:
    sys_ = cfg.build_system()
    sec = cfg.section("check")
    tol_A = _number(sec, "tol_A", 1e-9, "check", positive=True)
    samples = [np.asarray(s, dtype=float) for s in sec.get("samples", [])]
    n_rand = int(_number(sec, "random_samples", 0 if samples else 20, "check"))
    if n_rand:
        box = _number(sec, "box", 2.0, "check", positive=True)
        rng = np.random.default_rng(cfg.seed)
        samples += list(rng.uniform(-box, box, size=(n_rand, 4)))
    rows, all_hold = [], True
    for i, x in enumerate(samples):
        if x.shape != (4,):
            raise ConfigError("each sample is a list of 4 numbers", f"check.samples[{i}]")
        chk = check_assumption_A(sys_, x, tol_A)
        all_hold &= chk.holds
        rows.append(["A", *x, chk.det, chk.holds])
    summary = {"assumption_A": bool(all_hold), "n_samples": len(samples)}
    generic = True
    if "sigma0_point" in sec or cfg.system == "example":
        if "sigma0_point" in sec:
            zbar = CotangentPoint.from_array(_vector(sec, "sigma0_point", 8, "check"))
        else:
            zbar = solve_contact_condition(a=1.0, b=0.0, c=1.0).contact_point()
        tol_gen = _number(sec, "tol_gen", 1e-9, "check", positive=True)
        nf = normal_form_params(sys_, zbar, tol_rho=1e-6)
        lv = lift_values(sys_, zbar)
        generic = abs(nf.c) > tol_gen
        summary.update({"c": nf.c, "a": nf.a, "sigma0_class": classify(lv, tol_sigma=1e-6, tol_rho=1e-6).value,
                        "generic": bool(generic)})
        rows.append(["c", *zbar.x, nf.c, generic])
    code = EXIT_OK if all_hold and generic else EXIT_NUMERIC
    return Result(("kind", "x1", "x2", "x3", "x4", "value", "pass"), rows, summary, code)


TRAJ_COLUMNS = ("frame", "t", "x1", "x2", "x3", "x4", "p1", "p2", "p3", "p4", "rho", "s", "class")


def _trajectory_rows(sys_, arcs, tag=""):
    rows = []
    for arc in arcs:
        ts = arc.physical_times
        for t, y in zip(ts, arc.states):
            z = point_from_state(sys_, y) if arc.frame != "t" else CotangentPoint.from_array(y)
            lv = lift_values(sys_, z)
            theta = math.atan2(lv.H2, lv.H1) if arc.frame == "t" else y[5]
            s = wrap(theta - math.atan2(lv.H02, lv.H01) - math.pi / 2)
            rows.append([tag + arc.frame, t, *z.x, *z.p, lv.rho, s, classify(lv).value])
    return rows


def _events_summary(ex):
    return [dict(d, t=t) for t, d in ex.events]


def cmd_simulate(cfg: RunConfig) -> Result:
    sys_ = cfg.build_system()
    z0 = CotangentPoint.from_array(_vector(cfg.section("simulate"), "z0", 8, "simulate"))
    ex = integrate_near_sigma(sys_, z0, cfg.options())
    switches = ex.find(SWITCH_PI)
    summary = {"events": _events_summary(ex), "n_switches": len(switches),
               "contact": bool(ex.find(CONTACT)), "terminal": ex.terminal_event,
               "jumps": [{"t": j.t, "gap": j.gap, "kind": j.kind} for j in ex.controls.jumps]}
    if not switches and not ex.find(CONTACT):
        summary["result"] = "no switch"
    return Result(TRAJ_COLUMNS, _trajectory_rows(sys_, ex.arcs), summary)


def cmd_classify(cfg: RunConfig) -> Result:
    sys_ = cfg.build_system()
    z0 = CotangentPoint.from_array(_vector(cfg.section("classify"), "z0", 8, "classify"))
    lab = classify_initial_condition(sys_, z0, cfg.options())
    witness = {k: v for k, v in lab.witness.items() if k != "zbar"}
    return Result(("label",), [[lab.label]], {"label": lab.label, "witness": witness})


def cmd_portrait(cfg: RunConfig) -> Result:
    sec = cfg.section("portrait")
    c = _number(sec, "c", 1.0, "portrait")
    n = int(_number(sec, "n", 50, "portrait", positive=True))
    nb = sec.get("n_boundary")
    por = portrait_sphere(c, n=n, box=_number(sec, "box", 2.0, "portrait", positive=True),
                          n_boundary=None if nb is None else int(nb),
                          T=_number(sec, "T", 40.0, "portrait", positive=True))
    summary = {"c": c, "forward_counts": por.counts("limit_forward"),
               "backward_counts": por.counts("limit_backward")}
    return Result(por.columns, por.table(), summary)


def cmd_manifold(cfg: RunConfig) -> Result:
    sec = cfg.section("manifold")
    arc = stable_manifold_m0(_number(sec, "c", 1.0, "manifold"),
                             _number(sec, "eps", 1e-4, "manifold", positive=True),
                             horizon=_number(sec, "horizon", 400.0, "manifold", positive=True),
                             R_exit=_number(sec, "R_exit", 0.5, "manifold", positive=True),
                             opts=cfg.options())
    meta = {k: v for k, v in arc.meta.items() if k != "seed"}
    rows = [[t, *y] for t, y in zip(arc.times, arc.states)]
    return Result(("t3", "R", "sbar", "zetabar"), rows, meta)


def cmd_example(cfg: RunConfig) -> Result:
    sec = cfg.section("example")
    given = {k: sec[k] for k in ("a", "b", "c", "d") if k in sec}
    if len(given) == 4:
        params = ExampleParams(**{k: float(v) for k, v in given.items()})
    else:
        defaults = {"a": 1.0, "b": 0.0, "c": 1.0}
        free = {"d"} if "d" not in given else {k for k in "abc" if k not in given}
        if len(free) != 1:
            raise ConfigError("give three of a, b, c, d (or none)", "example")
        kw = {k: float(given.get(k, defaults.get(k))) for k in "abcd" if k not in free}
        params = solve_contact_condition(**kw)
    rep = run_example(params, band=_number(sec, "band", 1e-6, "example", positive=True),
                      R_seed=_number(sec, "R_seed", 1e-5, "example", positive=True),
                      R_contact=_number(sec, "R_contact", 1e-4, "example", positive=True),
                      opts=cfg.options())
    sys_ = example_system()
    back, far = rep.exact["extremal"]
    rows = _trajectory_rows(sys_, far.arcs[::-1], "far-") + _trajectory_rows(sys_, back.arcs[::-1], "contact-")
    t_init = float(far.arcs[-1].states[-1][8])  # the example's clock starts at the initial point
    for r in rows:
        r[1] -= t_init
    rows.sort(key=lambda r: r[1])
    summary = {"params": vars(params), "contact_residual": rep.contact_residual,
               "closed_form": {k: v for k, v in rep.closed_form.items() if k not in ("times", "states")},
               "exact": {k: v for k, v in rep.exact.items() if k != "extremal"}}
    return Result(TRAJ_COLUMNS, rows, summary)


def cmd_blowup(cfg: RunConfig) -> Result:
    sec = cfg.section("blowup")
    pts = sec.get("points")
    if not isinstance(pts, list) or not pts:
        raise ConfigError("points must be a non-empty list of [rho, s, zeta]", "blowup.points")
    rows = []
    for i, p in enumerate(pts):
        if not isinstance(p, list) or len(p) != 3:
            raise ConfigError("each point is [rho, s, zeta]", f"blowup.points[{i}]")
        rho, s, z = map(float, p)
        st = blow_up_i(rho, s, z)
        st2 = chart_i_to_ii(st)
        back = blow_down(chart_ii_to_i(st2))
        err = float(np.max(np.abs(np.array(back) - np.array([rho, s, z]))))
        rows.append([rho, s, z, st.R, st.sbar, st.zetabar, st2.R, st2.omega, st2.rhobar, err])
    cols = ("rho", "s", "zeta", "R_i", "sbar", "zetabar", "R_ii", "omega", "rhobar", "roundtrip_error")
    return Result(cols, rows, {"max_roundtrip_error": max(r[-1] for r in rows)})


HANDLERS = {"check": cmd_check, "simulate": cmd_simulate, "classify": cmd_classify,
            "portrait": cmd_portrait, "manifold": cmd_manifold, "example": cmd_example,
            "blowup": cmd_blowup}


# --- entry point ---------------------------------------------------------------------------

COMMAND_HELP = {
    "check": "verify the rank and genericity conditions on sample points",
    "simulate": "integrate an extremal from z0 through switches and contacts",
    "classify": "report the Sigma class and normal-form constants at z0",
    "portrait": "sample the blown-up sphere and tabulate limit sets",
    "manifold": "trace the radial invariant manifold of m0",
    "example": "run the Kepler-type example by both routes",
    "blowup": "convert points between the blow-up charts",
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nilswitch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", type=Path, required=True)
        p.add_argument("--out", type=Path, default=Path("out"))
        p.add_argument("--seed", type=int)
        p.add_argument("--tol-abs", type=float)
        p.add_argument("--tol-rel", type=float)
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    return ap


def _fail(out: Optional[Path], payload: dict, code: int) -> int:
    text = json.dumps(payload, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "error.json").write_text(text + "\n")
        except OSError:
            pass
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc.strerror}", "--config") from None
        cfg = RunConfig.from_text(text)
        if args.seed is not None:
            cfg.seed = args.seed
        for flag, key in ((args.tol_abs, "atol"), (args.tol_rel, "rtol")):
            if flag is not None:
                cfg.tolerances[key] = flag
        cfg.options()
        res = HANDLERS[args.command](cfg)
        write_outputs(args.out, args.command, cfg, res, args.format)
    except ConfigError as exc:
        return _fail(args.out, exc.as_dict(), EXIT_CONFIG)
    except Inconclusive as exc:
        return _fail(args.out, {"error": "Inconclusive", "message": str(exc),
                                "min_distance": exc.min_distance}, EXIT_INCONCLUSIVE)
    except NUMERIC_ERRORS + (NonFiniteOutput, ValueError, RuntimeError) as exc:
        return _fail(args.out, {"error": type(exc).__name__, "message": str(exc)}, EXIT_NUMERIC)
    print(json.dumps({"command": args.command, "exit_code": res.exit_code, "out": str(args.out)}))
    return res.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
