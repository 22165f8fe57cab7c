"""Command-line front end: ``pmelab check|simulate|sweep|oracle <config>``.

Exit codes: 0 success, 1 validation or assumption failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import grid_ops as go
from .diagnostics import estimate_norms
from .exprlang import ExprError, parse
from .limit_oracle import (
    TRANSIENT,
    UnsupportedProblemError,
    cauchy_table,
    front_ode,
    front_position_error,
    oracle_parameters,
    saturated_profile,
)
from .model import AssumptionReport, ProblemSpec, ab_m_threshold, check_assumptions
from .pme_solver import SolverError, Trajectory, simulate, simulate_many

log = logging.getLogger("pmelab")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

# config key -> (ProblemSpec field, parser); None marks run options
_FLOAT = float
_EXPR = "expr"
KEYS = {
    "dim": ("dim", int),
    "L": ("L", _FLOAT),
    "n": ("n", int),
    "T": ("T", _FLOAT),
    "a": ("a", _EXPR),
    "b": ("b", _EXPR),
    "phi": ("phi", _EXPR),
    "u0": ("u0", _EXPR),
    "p0": ("p0", _EXPR),
    "lambda": ("lam", _FLOAT),
    "p_M": ("p_M", _FLOAT),
    "Lambda": ("Lambda", _FLOAT),
    "tilde_lambda": ("tilde_lambda", _FLOAT),
    "m_list": ("m_list", "floats"),
    "epsilon_lift": ("epsilon_lift", _FLOAT),
    "cfl": ("cfl", _FLOAT),
    "snapshots": ("snapshots", int),
    "R0": ("R0", _FLOAT),
    "outdir": (None, str),
    "force": (None, "bool"),
}
REQUIRED = ("L", "T", "a", "b", "phi", "lambda", "p_M", "Lambda", "tilde_lambda", "m_list")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    spec: ProblemSpec
    path: Path
    text: str
    outdir: Path | None = None
    force: bool = False
    lines: dict[str, int] = field(default_factory=dict)


def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _strip_quotes(text: str) -> str:
    if len(text) >= 2 and text[0] == text[-1] and text[0] in "\"'":
        return text[1:-1]
    return text


def parse_config_text(text: str, path: Path | str = "<config>") -> Config:
    """Parse ``key = value`` lines. ``#`` starts a comment; values may be quoted."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in lines:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r} (first on line {lines[key]})")
        value = _strip_quotes(value)
        kind = KEYS[key][1]
        try:
            if kind == _EXPR:
                parse(value)
                parsed: object = value
            elif kind == "floats":
                parsed = tuple(float(v) for v in value.split(",") if v.strip())
            elif kind == "bool":
                parsed = _parse_bool(value)
            else:
                parsed = kind(value)
        except (ExprError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from exc
        values[key] = parsed
        lines[key] = lineno

    missing = [k for k in REQUIRED if k not in values]
    if "u0" not in values and "p0" not in values:
        missing.append("u0 (or p0)")
    if missing:
        raise ConfigError(f"{path}: missing required key(s): {', '.join(missing)}")

    kwargs = {KEYS[k][0]: v for k, v in values.items() if KEYS[k][0] is not None}
    kwargs.setdefault("u0", None)
    try:
        spec = ProblemSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    outdir = Path(values["outdir"]) if "outdir" in values else None
    return Config(spec, Path(path), text, outdir, bool(values.get("force", False)), lines)


def load_config(path: Path | str) -> Config:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config_text(text, path)


# ------------------------------------------------------------- outputs


def _fmt_m(m: float) -> str:
    return f"{m:g}"


def _fmt(v: float) -> str:
    return go.FLOAT_FMT % v


def snapshot_name(m: float, t: float) -> str:
    return f"u_m{_fmt_m(m)}_t{t:.6f}.csv"


def steps_csv(traj: Trajectory) -> str:
    cols = ("t", "dt", "mass", "sup_p", "support_radius", "clamped_mass")
    data = np.column_stack([traj.steps[c] for c in cols])
    lines = [",".join(cols)] + [",".join(_fmt(v) for v in row) for row in data]
    return "\n".join(lines) + "\n"


def _write(path: Path, text: str, written: list[str], root: Path) -> None:
    path.write_text(text)
    written.append(str(path.relative_to(root)))


class _Run:
    """Output directory bookkeeping shared by the commands."""

    def __init__(self, cfg: Config, command: str, outdir: Path | None):
        self.cfg = cfg
        self.command = command
        self.root = outdir or cfg.outdir or Path(f"pmelab-{cfg.path.stem}")
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.timings: dict[str, float] = {}
        self.extra: dict[str, object] = {}
        self.status = "ok"
        self.error: str | None = None
        self.t0 = time.perf_counter()
        if cfg.path.exists():
            dest = self.root / cfg.path.name
            if dest.resolve() != cfg.path.resolve():
                shutil.copyfile(cfg.path, dest)
        else:
            dest = self.root / "config.txt"
            dest.write_text(cfg.text)
        self.files.append(dest.name)

    def write(self, name: str, text: str) -> None:
        _write(self.root / name, text, self.files, self.root)

    def assumptions(self) -> AssumptionReport:
        report = check_assumptions(self.cfg.spec)
        self.write("assumptions.csv", report.to_csv())
        self.extra["assumptions_passed"] = report.all_passed
        self.extra["ab_threshold"] = ab_m_threshold(self.cfg.spec)
        return report

    def finish(self) -> None:
        self.timings["total_s"] = time.perf_counter() - self.t0
        manifest = {
            "tool": "pmelab",
            "version": __version__,
            "command": self.command,
            "status": self.status,
            "error": self.error,
            "config": self.files[0],
            "files": sorted(set(self.files[1:])),
            "timings_s": self.timings,
            **self.extra,
        }
        (self.root / "manifest.json").write_text(
            json.dumps(_finite(manifest), indent=2, sort_keys=True, default=_json_default) + "\n"
        )


def _finite(obj):
    """Replace NaN and infinities by None so the manifest stays valid JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)) and not math.isfinite(obj):
        return None
    return obj


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError(f"not serializable: {type(obj)}")


def _write_run_outputs(run: _Run, traj: Trajectory) -> dict[str, float]:
    """Snapshots, steps, report and front files of one m; returns the summary row."""
    m = traj.m
    tag = _fmt_m(m)
    grid = traj.grid
    for t, u in zip(traj.times, traj.snapshots):
        run.write(snapshot_name(m, t), go.field_to_csv(u, grid))
    run.write(f"steps_m{tag}.csv" if run.command == "sweep" else "steps.csv", steps_csv(traj))
    report = estimate_norms(traj)
    run.write(f"report_m{tag}.csv", report.to_csv())
    run.write(f"front_m{tag}.csv", report.front.to_csv())
    run.extra.setdefault("warnings", {})[tag] = list(traj.warnings) + list(report.notes)
    front_err = float("nan")
    try:
        lam, p_M, a, _ = oracle_parameters(traj.spec)
    except UnsupportedProblemError:
        pass
    else:
        if len(report.front) and traj.spec.T > 0:
            R0 = traj.spec.R0 if traj.spec.R0 is not None else float(report.front.R[0])
            oracle = front_ode(R0, traj.spec.T, lam, p_M, a)
            front_err = front_position_error(report.front, oracle, TRANSIENT * a)
    return {
        "m": m,
        "sup_p": report["sup_p"],
        "comp_residual": report["complementarity"],
        "L4_gradp": report["grad_p_L4"],
        "L3_wneg": report["w_neg_L3"],
        "front_err": front_err,
    }


SUMMARY_COLUMNS = ("m", "sup_p", "comp_residual", "L4_gradp", "L3_wneg", "front_err")


def _summary_csv(rows: list[dict[str, float]]) -> str:
    lines = [",".join(SUMMARY_COLUMNS)]
    for row in rows:
        lines.append(",".join(_fmt(row[c]) for c in SUMMARY_COLUMNS))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------ commands


def cmd_check(cfg: Config, outdir: Path | None = None) -> int:
    run = _Run(cfg, "check", outdir)
    report = run.assumptions()
    print(report.to_table())
    run.finish()
    return EXIT_OK if report.all_passed else EXIT_INVALID


def _gate(run: _Run, force: bool) -> bool:
    report = run.assumptions()
    if report.all_passed:
        return True
    failed = ", ".join(report.failures())
    if force:
        log.warning("assumptions failed (%s); continuing because force is set", failed)
        run.extra["forced"] = True
        return True
    print(report.to_table())
    print(f"refusing to run: assumptions failed ({failed}); use --force to override", file=sys.stderr)
    run.status = "refused"
    run.error = f"assumptions failed: {failed}"
    run.finish()
    return False


def cmd_simulate(cfg: Config, m: float | None = None, force: bool = False, outdir=None) -> int:
    run = _Run(cfg, "simulate", outdir)
    if not _gate(run, force or cfg.force):
        return EXIT_INVALID
    m = cfg.spec.m_list[0] if m is None else float(m)
    run.extra["m"] = m
    try:
        t0 = time.perf_counter()
        traj = simulate(cfg.spec, m)
        run.timings[f"simulate_m{_fmt_m(m)}_s"] = time.perf_counter() - t0
        row = _write_run_outputs(run, traj)
    except (SolverError, ValueError) as exc:
        run.status, run.error = "failed", f"{type(exc).__name__}: {exc}"
        run.finish()
        print(f"simulation failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    run.write("sweep_summary.csv", _summary_csv([row]))
    run.finish()
    print(_summary_csv([row]), end="")
    return EXIT_OK


def cmd_sweep(cfg: Config, jobs: int | None = None, force: bool = False, outdir=None) -> int:
    ms = cfg.spec.m_list
    if len(ms) < 2:
        print("sweep needs at least two values in m_list", file=sys.stderr)
        return EXIT_INVALID
    run = _Run(cfg, "sweep", outdir)
    if not _gate(run, force or cfg.force):
        return EXIT_INVALID
    jobs = len(ms) if jobs is None else jobs
    rows = []
    try:
        t0 = time.perf_counter()
        trajs = simulate_many(cfg.spec, ms, jobs=jobs)
        run.timings["simulate_all_s"] = time.perf_counter() - t0
        for traj in trajs:
            rows.append(_write_run_outputs(run, traj))
        table = cauchy_table(trajs)
    except (SolverError, ValueError) as exc:
        run.status, run.error = "failed", f"{type(exc).__name__}: {exc}"
        if rows:
            run.write("sweep_summary.csv", _summary_csv(rows))
        run.finish()
        print(f"sweep failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    run.write("cauchy.csv", table.to_csv())
    run.write("sweep_summary.csv", _summary_csv(rows))
    run.extra["cauchy_ratio_u"] = table.ratio_u
    run.extra["cauchy_ratio_p"] = table.ratio_p
    run.finish()
    print(_summary_csv(rows), end="")
    print(table.to_csv(), end="")
    return EXIT_OK


def _initial_front(spec: ProblemSpec) -> float:
    """Front radius of the initial data: outermost cell with positive density, plus half a cell."""
    from .pme_solver import initial_density, support_radius

    u0 = initial_density(spec, spec.m_list[-1])
    r = support_radius(u0, spec.grid)
    if r <= 0:
        raise UnsupportedProblemError("initial data has no support; set R0")
    return r + 0.5 * spec.grid.h


def cmd_oracle(cfg: Config, sweep_dir: Path | None = None, outdir=None) -> int:
    spec = cfg.spec
    try:
        lam, p_M, a, b = oracle_parameters(spec)
        R0 = spec.R0 if spec.R0 is not None else _initial_front(spec)
    except UnsupportedProblemError as exc:
        print(f"oracle unsupported: {exc}", file=sys.stderr)
        return EXIT_INVALID
    run = _Run(cfg, "oracle", outdir)
    run.extra["R0"] = R0
    profile = saturated_profile(R0, lam, p_M, a, b)
    run.write("oracle_profile.csv", profile.to_csv())
    front = front_ode(R0, spec.T, lam, p_M, a)
    cols = {"t": front.t, "R": front.R, "dRdt": front.dRdt}
    if sweep_dir is not None:
        for m in spec.m_list:
            path = Path(sweep_dir) / f"front_m{_fmt_m(m)}.csv"
            if not path.exists():
                continue
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
            if data.shape[0] < 1:
                continue
            R_meas = np.interp(front.t, data[:, 0], data[:, 1])
            cols[f"R_m{_fmt_m(m)}"] = R_meas
            cols[f"relerr_m{_fmt_m(m)}"] = np.abs(R_meas - front.R) / front.R
    names = list(cols)
    data = np.column_stack([cols[k] for k in names])
    lines = [",".join(names)] + [",".join(_fmt(v) for v in row) for row in data]
    run.write("oracle_front.csv", "\n".join(lines) + "\n")
    run.extra["profile_closed_form_error"] = profile.max_closed_form_error
    run.finish()
    print(f"R0 = {R0:.17g}; p(0) = {profile.p_center:.17g}; R'(0) = {front.dRdt[0]:.17g}")
    return EXIT_OK


# ----------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pmelab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"pmelab {__version__}")
    ap.add_argument("command", choices=("check", "simulate", "sweep", "oracle"))
    ap.add_argument("config", type=Path)
    ap.add_argument("--m", type=float, default=None, help="stiffness exponent for simulate")
    ap.add_argument("--force", action="store_true", help="run even if assumptions fail")
    ap.add_argument("--jobs", type=int, default=None, help="worker processes for sweep")
    ap.add_argument("--outdir", type=Path, default=None)
    ap.add_argument("--sweep-dir", type=Path, default=None, help="sweep outputs to compare in oracle")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.jobs is not None and args.jobs < 1:
        print("--jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        if args.command == "check":
            return cmd_check(cfg, args.outdir)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.m, args.force, args.outdir)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.jobs, args.force, args.outdir)
        return cmd_oracle(cfg, args.sweep_dir, args.outdir)
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
