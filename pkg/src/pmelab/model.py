"""Problem data, the pressure-density law, derived coefficients and assumption checks."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property

import numpy as np

from .exprlang import (
    BinOp,
    Call,
    Env,
    Expr,
    ExprError,
    depends_on,
    evaluate,
    fd_derivative,
    parse,
)
from .grid_ops import Grid

CHECK_TOL = 1e-6
GUARD_CELLS = 4


@dataclass(frozen=True)
class ProblemSpec:
    """One experiment. Expression fields hold source text and are parsed on construction."""

    L: float
    T: float
    a: str
    b: str
    phi: str
    u0: str | None
    lam: float
    p_M: float
    Lambda: float
    tilde_lambda: float
    m_list: tuple[float, ...]
    dim: int = 1
    n: int = 256
    epsilon_lift: float = 0.0
    cfl: float = 0.5
    snapshots: int = 64
    R0: float | None = None
    p0: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "m_list", tuple(float(m) for m in self.m_list))
        for name in ("lam", "p_M", "Lambda", "tilde_lambda", "L"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")
        if not self.T >= 0:
            raise ValueError(f"T must be non-negative, got {self.T}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.m_list:
            raise ValueError("m_list is empty")
        bad = [m for m in self.m_list if not m >= 2]
        if bad:
            raise ValueError(f"every m must be >= 2, got {bad}")
        if not 0 < self.cfl <= 1:
            raise ValueError(f"cfl must lie in (0, 1], got {self.cfl}")
        if self.epsilon_lift < 0:
            raise ValueError("epsilon_lift must be >= 0")
        if self.snapshots < 1:
            raise ValueError("snapshots must be >= 1")
        if bool(self.u0) == bool(self.p0):
            raise ValueError("give exactly one of u0 (density) and p0 (pressure) initial data")
        for name in ("a", "b", "phi", self.initial_key):
            expr = parse(getattr(self, name))
            if name != "phi" and depends_on(expr, "p"):
                raise ValueError(f"{name} may not depend on p")
            if self.dim == 1 and depends_on_y(expr):
                raise ValueError(f"{name} uses y in a 1D problem")
        # validates n
        Grid(self.dim, self.n, self.L)

    @cached_property
    def a_expr(self) -> Expr:
        return parse(self.a)

    @cached_property
    def b_expr(self) -> Expr:
        return parse(self.b)

    @cached_property
    def phi_expr(self) -> Expr:
        return parse(self.phi)

    @property
    def initial_key(self) -> str:
        """``"u0"`` or ``"p0"``, whichever initial data was given."""
        return "u0" if self.u0 else "p0"

    @cached_property
    def u0_expr(self) -> Expr | None:
        return parse(self.u0) if self.u0 else None

    @property
    def initial_expr(self) -> Expr:
        return self.u0_expr if self.u0_expr is not None else self.p0_expr

    @cached_property
    def p0_expr(self) -> Expr | None:
        return parse(self.p0) if self.p0 else None

    @property
    def grid(self) -> Grid:
        return Grid(self.dim, self.n, self.L)

    def with_(self, **changes) -> "ProblemSpec":
        return replace(self, **changes)

    def coefficients_time_dependent(self) -> bool:
        return depends_on(self.a_expr, "t") or depends_on(self.b_expr, "t")

    def constant_coefficients(self) -> bool:
        return not any(
            depends_on(e, v) for e in (self.a_expr, self.b_expr) for v in ("x", "y", "t")
        )

    def __getstate__(self):
        # cached_property entries are rebuilt after unpickling
        return {k: v for k, v in self.__dict__.items() if not k.endswith("_expr")}

    def __setstate__(self, state):
        self.__dict__.update(state)


def depends_on_y(expr: Expr) -> bool:
    from .exprlang import free_variables

    return "y" in free_variables(expr)


def standard_case(**overrides) -> ProblemSpec:
    """Reference growth problem: 1D, a = b = 1, Phi = 1 - p.

    The initial data is a C^1 pressure bump of height 0.5 on |x| < 0.6 (a
    squared parabola, so lap p_m^0 is bounded up to the edge), the same
    pressure for every m, so gradients and Laplacians of p_m^0 do not grow
    with m.
    """
    params = dict(
        dim=1,
        L=2.0,
        n=256,
        T=1.0,
        a="1",
        b="1",
        phi="1 - p",
        u0=None,
        p0="0.5*max(0, 1 - (x/0.6)^2)^2",
        lam=1.0,
        p_M=1.0,
        Lambda=2.0,
        tilde_lambda=1.0,
        m_list=(10, 20, 40, 80),
        cfl=0.8,
        snapshots=64,
    )
    params.update(overrides)
    return ProblemSpec(**params)


# ------------------------------------------------------- constitutive law


def pressure_from_density(u, b, m: float):
    """``m/(m-1) (u/b)^(m-1)``; zero density gives zero pressure."""
    return m / (m - 1.0) * np.power(np.asarray(u, dtype=float) / b, m - 1.0)


def density_from_pressure(p, b, m: float):
    """Inverse of :func:`pressure_from_density`."""
    return b * np.power((m - 1.0) / m * np.asarray(p, dtype=float), 1.0 / (m - 1.0))


def initial_density_in(spec: ProblemSpec, env: Env, m: float):
    """Initial density at the points of ``env`` (time 0).

    With pressure-level data ``p0`` the density is ``density_from_pressure(p0, b, m)``,
    so every m starts from the same pressure. Negative pressures map to density 0;
    callers check the sign of the raw data separately.
    """
    if spec.u0_expr is not None:
        return evaluate(spec.u0_expr, env)
    p0 = np.maximum(evaluate(spec.p0_expr, env), 0.0)
    return density_from_pressure(p0, evaluate(spec.b_expr, env), m)


# --------------------------------------------------- derived coefficients


def _on_grid(value, shape) -> np.ndarray:
    return np.array(np.broadcast_to(np.asarray(value, dtype=float), shape))


def _env(coords, t, p=None) -> Env:
    if len(coords) == 1:
        return Env(x=coords[0], t=t, p=p)
    return Env(x=coords[0], y=coords[1], t=t, p=p)


@dataclass
class DerivedCoefficients:
    """Coefficient fields on a grid at one time.

    ``gamma`` is the drift ``grad log(b/a)``; ``phi_tilde`` and ``phi_bar``
    are the shifted growth terms ``Phi - a dt(log b)`` and
    ``(b/a) Phi - dt b``.
    """

    spec: ProblemSpec
    grid: Grid
    t: float
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    dt_b: np.ndarray
    lap_log_ba: np.ndarray
    coords: tuple = field(repr=False, default=())

    @classmethod
    def build(cls, spec: ProblemSpec, grid: Grid | None = None, t: float = 0.0):
        grid = grid or spec.grid
        shape = grid.shape
        coords = grid.coords
        env = _env(coords, t)
        a = _on_grid(evaluate(spec.a_expr, env), shape)
        b = _on_grid(evaluate(spec.b_expr, env), shape)
        log_ba = log_ratio_expr(spec)
        axes = ("x", "y")[: grid.dim]
        gamma = np.stack([_on_grid(fd_derivative(log_ba, env, v, 1), shape) for v in axes])
        lap = sum(_on_grid(fd_derivative(log_ba, env, v, 2), shape) for v in axes)
        dt_b = _on_grid(fd_derivative(spec.b_expr, env, "t", 1), shape)
        return cls(spec, grid, t, a, b, gamma, dt_b, lap, coords)

    @cached_property
    def ba(self) -> np.ndarray:
        return self.b / self.a

    @cached_property
    def dt_log_b(self) -> np.ndarray:
        return self.dt_b / self.b

    @cached_property
    def phi_depends_on_space_time(self) -> bool:
        e = self.spec.phi_expr
        return any(depends_on(e, v) for v in ("x", "y", "t"))

    def phi(self, p) -> np.ndarray:
        """Growth term evaluated cellwise with pressure field ``p``."""
        env = _env(self.coords, self.t, p)
        value = evaluate(self.spec.phi_expr, env)
        if isinstance(value, np.ndarray) and value.shape == self.grid.shape:
            return value
        return _on_grid(value, self.grid.shape)

    def phi_tilde(self, p) -> np.ndarray:
        return self.phi(p) - self.a * self.dt_log_b

    def phi_bar(self, p) -> np.ndarray:
        return self.ba * self.phi(p) - self.dt_b


def log_ratio_expr(spec: ProblemSpec) -> Expr:
    return Call("log", (BinOp("/", spec.b_expr, spec.a_expr),))


# ------------------------------------------------------ assumption checks


class AssumptionEvaluationError(Exception):
    def __init__(self, what: str, point: dict, cause: Exception):
        self.point = point
        super().__init__(f"evaluating {what} at {point}: {cause}")


@dataclass
class AssumptionRow:
    name: str
    passed: bool
    margin: float
    value: float
    worst_point: dict
    note: str = ""


@dataclass
class AssumptionReport:
    rows: list[AssumptionRow]
    notes: list[str] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, name: str) -> AssumptionRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [r.name for r in self.rows if not r.passed]

    def to_table(self) -> str:
        lines = [f"{'assumption':<14} {'status':<6} {'margin':>14} {'value':>14}  worst point / note"]
        for r in self.rows:
            where = ", ".join(f"{k}={v:.6g}" for k, v in r.worst_point.items())
            extra = "; ".join(s for s in (where, r.note) if s)
            lines.append(
                f"{r.name:<14} {'PASS' if r.passed else 'FAIL':<6} "
                f"{r.margin:>14.6g} {r.value:>14.6g}  {extra}"
            )
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines)

    def to_csv(self) -> str:
        out = ["name,passed,margin,value,worst_point,note"]
        for r in self.rows:
            where = " ".join(f"{k}={v:.17g}" for k, v in r.worst_point.items())
            out.append(f"{r.name},{int(r.passed)},{r.margin:.17g},{r.value:.17g},{where},{r.note}")
        return "\n".join(out) + "\n"


class _Sampler:
    """Space-time(-pressure) sample box on a 2x refined grid."""

    n_times = 9
    n_pressures = 9

    def __init__(self, spec: ProblemSpec):
        self.spec = spec
        self.grid = Grid(spec.dim, 2 * spec.n, spec.L)
        self.times = np.linspace(0.0, spec.T, self.n_times) if spec.T > 0 else np.zeros(1)
        self.pressures = np.linspace(0.0, spec.p_M, self.n_pressures)

    def point(self, idx, t, p=None) -> dict:
        pt = {}
        for name, c in zip(("x", "y"), self.grid.coords):
            pt[name] = float(c[idx])
        pt["t"] = float(t)
        if p is not None:
            pt["p"] = float(p)
        return pt

    def evaluate(self, what: str, fn, t, p=None) -> np.ndarray:
        try:
            return _on_grid(fn(_env(self.grid.coords, t, p)), self.grid.shape)
        except ExprError as exc:
            # locate a failing sample for the message
            for idx in np.ndindex(self.grid.shape):
                pt = self.point(idx, t, p)
                try:
                    fn(Env(**pt))
                except ExprError:
                    raise AssumptionEvaluationError(what, pt, exc) from exc
            raise AssumptionEvaluationError(what, {"t": float(t)}, exc) from exc

    def extreme(self, what: str, fn, kind: str, with_pressure: bool = False):
        """Worst value over the sample box: (value, point)."""
        best = None
        pressures = self.pressures if with_pressure else [None]
        for t in self.times:
            for p in pressures:
                vals = self.evaluate(what, fn, t, p)
                idx = np.unravel_index(
                    np.argmax(vals) if kind == "max" else np.argmin(vals), vals.shape
                )
                v = float(vals[idx])
                if best is None or (v > best[0] if kind == "max" else v < best[0]):
                    best = (v, self.point(idx, t, p))
        return best


def check_assumptions(spec: ProblemSpec) -> AssumptionReport:
    """Sample the four standing assumptions on a refined space-time-pressure box."""
    s = _Sampler(spec)
    tol = CHECK_TOL
    rows = []
    Lam = spec.Lambda
    a_e, b_e, phi_e = spec.a_expr, spec.b_expr, spec.phi_expr

    # A1: bounds on a, b
    worst = None
    for name, e in (("a", a_e), ("b", b_e)):
        lo, lo_pt = s.extreme(name, lambda env, e=e: evaluate(e, env), "min")
        hi, hi_pt = s.extreme(name, lambda env, e=e: evaluate(e, env), "max")
        for margin, val, pt in ((lo - 1 / Lam, lo, lo_pt), (Lam - hi, hi, hi_pt)):
            if worst is None or margin < worst[0]:
                worst = (margin, val, pt, name)
    margin, val, pt, name = worst
    rows.append(AssumptionRow("A1-bounds", margin >= -tol, margin, val, pt, f"worst coefficient {name}"))

    # A1: derivatives of order <= 2 (orders 3-4 not checked)
    axes = ("x", "y")[: spec.dim] + ("t",)
    worst = None
    for name, e in (("a", a_e), ("b", b_e)):
        for v in axes:
            for order in (1, 2):
                what = f"d{order}{name}/d{v}{order}"
                fn = lambda env, e=e, v=v, o=order: np.abs(fd_derivative(e, env, v, o))
                hi, pt = s.extreme(what, fn, "max")
                if worst is None or Lam - hi < worst[0]:
                    worst = (Lam - hi, hi, pt, what)
    margin, val, pt, what = worst
    rows.append(
        AssumptionRow(
            "A1-derivs", margin >= -tol, margin, val, pt, f"worst {what}; orders 3-4 not checked"
        )
    )

    # A1: Phi decreasing at rate lambda, root at p_M
    hi, pt = s.extreme(
        "dPhi/dp", lambda env: fd_derivative(phi_e, env, "p", 1), "max", with_pressure=True
    )
    margin = -spec.lam - hi
    rows.append(AssumptionRow("A1-Phi", margin >= -tol, margin, hi, pt, "max dPhi/dp"))
    root_fn = lambda env: np.abs(evaluate(phi_e, Env(env.x, env.y, env.t, spec.p_M)))
    hi, pt = s.extreme("Phi(p_M)", root_fn, "max")
    rows.append(AssumptionRow("A1-Phi-root", hi <= tol, tol - hi, hi, pt, "max |Phi(x,t,p_M)|"))

    # A2: initial data
    rows.extend(_check_initial_data(spec, s))

    # A3: coefficient structure
    rows.append(_check_structure(spec, s))

    # A4: Laplacian of log(b/a)
    log_ba = log_ratio_expr(spec)
    space = ("x", "y")[: spec.dim]
    lap_fn = lambda env: sum(fd_derivative(log_ba, env, v, 2) for v in space)
    lo, pt = s.extreme("lap log(b/a)", lap_fn, "min")
    target = spec.tilde_lambda - spec.lam
    margin = lo - target
    rows.append(
        AssumptionRow("A4", margin >= -tol, margin, lo, pt, f"min lap log(b/a) vs {target:.6g}")
    )

    notes = [
        "A2 bounds on grad p_m^0, lap p_m^0 and dt p_m^0 are not checked",
        "A1 derivative bounds are checked for orders 1 and 2 only",
    ]
    return AssumptionReport(rows, notes)


def _check_initial_data(spec: ProblemSpec, s: _Sampler) -> list[AssumptionRow]:
    rows = []
    grid = s.grid
    key = spec.initial_key
    raw = s.evaluate(key, lambda env: evaluate(spec.initial_expr, env), 0.0)
    b0 = s.evaluate("b", lambda env: evaluate(spec.b_expr, env), 0.0)
    idx = np.unravel_index(np.argmin(raw), raw.shape)
    lo = float(raw[idx])
    rows.append(AssumptionRow("A2-nonneg", lo >= 0, lo, lo, s.point(idx, 0.0), f"min {key}"))

    worst = None
    for m in spec.m_list:
        if spec.p0_expr is None:
            p0 = pressure_from_density(np.maximum(raw, 0.0), b0, m)
        else:
            p0 = np.maximum(raw, 0.0)
        idx = np.unravel_index(np.argmax(p0), p0.shape)
        margin = spec.p_M - float(p0[idx])
        if worst is None or margin < worst[0]:
            worst = (margin, float(p0[idx]), s.point(idx, 0.0), m)
    margin, val, pt, m = worst
    rows.append(
        AssumptionRow("A2-pressure", margin >= -CHECK_TOL, margin, val, pt, f"max p_m^0 at m={m:g}")
    )
    u0 = raw

    # support strictly inside the box: no mass in the guard band
    h = spec.grid.h
    edge = spec.L - GUARD_CELLS * h
    band = np.zeros(grid.shape, dtype=bool)
    for c in grid.coords:
        band |= np.abs(c) > edge
    outside = np.where(band, np.abs(u0), 0.0)
    idx = np.unravel_index(np.argmax(outside), outside.shape)
    hi = float(outside[idx])
    rows.append(
        AssumptionRow(
            "A2-support", hi == 0.0, -hi, hi, s.point(idx, 0.0),
            f"max {key} within {GUARD_CELLS} cells of the box edge",
        )
    )
    return rows


def _check_structure(spec: ProblemSpec, s: _Sampler) -> AssumptionRow:
    if spec.dim == 1:
        return AssumptionRow("A3", True, 0.0, 0.0, {}, "clause (i): d = 1")
    tol = CHECK_TOL
    # clause (ii): radial symmetry, compared across 16 rotations
    radii = np.linspace(0.0, spec.L, 33)
    angles = 2 * np.pi * np.arange(16) / 16
    R, A = np.meshgrid(radii, angles, indexing="ij")
    X, Y = R * np.cos(A), R * np.sin(A)
    dev, dev_pt = 0.0, {}
    for t in s.times:
        env = Env(x=X, y=Y, t=float(t))
        for name, e in (("a", spec.a_expr), ("b", spec.b_expr)):
            vals = _on_grid(evaluate(e, env), X.shape)
            spread = vals.max(axis=1) - vals.min(axis=1)
            i = int(np.argmax(spread))
            if spread[i] > dev:
                dev, dev_pt = float(spread[i]), {"r": float(radii[i]), "t": float(t)}
    if dev <= tol:
        return AssumptionRow("A3", True, tol - dev, dev, dev_pt, "clause (ii): a, b radial")

    # clause (iii): |grad(b/a)| <= eps/|x| outside R = L/4
    eps = (spec.dim - 0.5) / spec.Lambda**2
    R0 = spec.L / 4
    ratio = BinOp("/", spec.b_expr, spec.a_expr)
    r = s.grid.radius

    def growth(env):
        g = np.sqrt(
            fd_derivative(ratio, env, "x", 1) ** 2 + fd_derivative(ratio, env, "y", 1) ** 2
        )
        return np.where(r >= R0, g * r, 0.0)

    hi, pt = s.extreme("|grad(b/a)| |x|", growth, "max")
    margin = eps - hi
    note = f"clause (iii) with R={R0:.6g}, eps={eps:.6g}; not radial (spread {dev:.3g})"
    return AssumptionRow("A3", margin >= -tol, margin, hi, pt, note)


# ------------------------------------------------- Aronson-Benilan threshold


def ab_threshold_from_bounds(sup_inv_a, inf_inv_a):
    """``max(2, 1 + (sup 1/a + 1)/(inf 1/a) * 8/3)``; exact for Fraction inputs."""
    eight_thirds = Fraction(8, 3) if isinstance(sup_inv_a, Fraction) else 8.0 / 3.0
    return max(2, 1 + (sup_inv_a + 1) / inf_inv_a * eight_thirds)


def ab_m_threshold(spec: ProblemSpec) -> float:
    """Stiffness above which the L3 Aronson-Benilan bound is guaranteed."""
    s = _Sampler(spec)
    lo, _ = s.extreme("a", lambda env: evaluate(spec.a_expr, env), "min")
    hi, _ = s.extreme("a", lambda env: evaluate(spec.a_expr, env), "max")
    return float(ab_threshold_from_bounds(1.0 / lo, 1.0 / hi))


def ab_guaranteed(m: float, threshold: float) -> bool:
    return m > threshold and not math.isclose(m, threshold)
