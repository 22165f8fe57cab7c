"""Reference solutions of the limit problem and the m-sweep convergence table.

The limit pressure inside a saturated interval ``(-R, R)`` with constant
coefficients solves ``p'' = -Phi(p)``, ``p(+-R) = 0``. For the linear growth law
``Phi = lam (p_M - p)`` the solution is

    p(x) = p_M (1 - cosh(sqrt(lam) x) / cosh(sqrt(lam) R)),

and the edge moves with normal speed ``|p'(R)| / a``. Both are computed twice
here: by shooting and in closed form.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import grid_ops as go
from .model import ProblemSpec, pressure_from_density
from .pme_solver import Trajectory, simulate_many

SHOOT_STEPS = 4096
SHOOT_TOL = 1e-10
FRONT_STEPS = 4096


class ShootingError(ValueError):
    """The shooting interval does not bracket a root, or bisection cannot reach the tolerance."""


class UnsupportedProblemError(ValueError):
    """The oracle only covers constant a, b and a linear growth law."""


@dataclass(frozen=True)
class SaturatedProfile:
    R: float
    x: np.ndarray
    p: np.ndarray
    edge_slope: float
    p_closed: np.ndarray
    lam: float
    p_M: float
    a: float
    b: float
    iterations: int

    @property
    def p_center(self) -> float:
        return float(self.p[0])

    @property
    def max_closed_form_error(self) -> float:
        return float(np.max(np.abs(self.p - self.p_closed)))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,p,p_closed\n")
        np.savetxt(
            buf, np.column_stack([self.x, self.p, self.p_closed]), fmt=go.FLOAT_FMT, delimiter=","
        )
        return buf.getvalue()


def closed_form_profile(x, R: float, lam: float, p_M: float):
    k = math.sqrt(lam)
    return p_M * (1.0 - np.cosh(k * np.asarray(x, dtype=float)) / math.cosh(k * R))


def closed_form_slope(R: float, lam: float, p_M: float, a: float = 1.0) -> float:
    """Front speed ``|p'(R)| / a = p_M sqrt(lam) tanh(sqrt(lam) R) / a``."""
    k = math.sqrt(lam)
    return p_M * k * math.tanh(k * R) / a


def _shoot(s: float, R: float, phi: Callable[[float], float], steps: int, keep: bool = False):
    """RK4 for ``p'' = -phi(p)`` from ``p(0) = s, p'(0) = 0`` to ``x = R``."""
    h = R / steps
    p, q = s, 0.0
    path = [p] if keep else None
    for _ in range(steps):
        k1p, k1q = q, -phi(p)
        k2p, k2q = q + 0.5 * h * k1q, -phi(p + 0.5 * h * k1p)
        k3p, k3q = q + 0.5 * h * k2q, -phi(p + 0.5 * h * k2p)
        k4p, k4q = q + h * k3q, -phi(p + h * k3p)
        p += h / 6.0 * (k1p + 2 * k2p + 2 * k3p + k4p)
        q += h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        if keep:
            path.append(p)
    return p, q, path


def saturated_profile(
    R: float,
    lam: float = 1.0,
    p_M: float = 1.0,
    a: float = 1.0,
    b: float = 1.0,
    *,
    phi: Callable[[float], float] | None = None,
    steps: int = SHOOT_STEPS,
    tol: float = SHOOT_TOL,
    max_iter: int = 200,
) -> SaturatedProfile:
    """Saturated limit pressure on ``[0, R]`` by shooting on ``p(0)``, plus the closed form.

    With constant a and b the interior equation does not involve them; they
    are carried along for the front speed. ``phi`` replaces the linear law in
    the shooting (the closed form always uses the linear law). The bisection
    interval is ``[0, p_M]``.
    """
    if not R > 0:
        raise ValueError(f"R must be positive, got {R}")
    if phi is None:
        phi = lambda p: lam * (p_M - p)  # noqa: E731
    lo, hi = 0.0, p_M
    f_lo = _shoot(lo, R, phi, steps)[0]
    f_hi = _shoot(hi, R, phi, steps)[0]
    if f_lo > 0 or f_hi < 0:
        raise ShootingError(
            f"p(R) at p(0)=0 and p(0)=p_M is {f_lo:.3g} and {f_hi:.3g}: no sign change on [0, p_M]"
        )
    s, f, it = lo, f_lo, 0
    while abs(f) > tol:
        if it >= max_iter or hi - lo <= 4 * np.finfo(float).eps * max(hi, 1.0):
            raise ShootingError(f"bisection stalled at |p(R)| = {abs(f):.3g} for R = {R}")
        s = 0.5 * (lo + hi)
        f = _shoot(s, R, phi, steps)[0]
        if f < 0:
            lo = s
        else:
            hi = s
        it += 1
    _, q, path = _shoot(s, R, phi, steps, keep=True)
    x = np.linspace(0.0, R, steps + 1)
    return SaturatedProfile(
        R=float(R),
        x=x,
        p=np.asarray(path),
        edge_slope=float(q),
        p_closed=closed_form_profile(x, R, lam, p_M),
        lam=float(lam),
        p_M=float(p_M),
        a=float(a),
        b=float(b),
        iterations=it,
    )


@dataclass(frozen=True)
class FrontSolution:
    t: np.ndarray
    R: np.ndarray
    dRdt: np.ndarray

    def at(self, t) -> np.ndarray:
        return np.interp(t, self.t, self.R)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,R,dRdt\n")
        np.savetxt(buf, np.column_stack([self.t, self.R, self.dRdt]), fmt=go.FLOAT_FMT, delimiter=",")
        return buf.getvalue()


def front_closed_form(t, R0: float, lam: float = 1.0, p_M: float = 1.0, a: float = 1.0):
    """Exact solution of ``R' = p_M sqrt(lam) tanh(sqrt(lam) R) / a``."""
    k = math.sqrt(lam)
    return np.arcsinh(math.sinh(k * R0) * np.exp(lam * p_M * np.asarray(t, dtype=float) / a)) / k


def front_ode(
    R0: float,
    T: float,
    lam: float = 1.0,
    p_M: float = 1.0,
    a: float = 1.0,
    *,
    phi: Callable[[float], float] | None = None,
    steps: int = FRONT_STEPS,
    shoot_steps: int = SHOOT_STEPS,
) -> FrontSolution:
    """RK4 for ``R' = |p'(R)| / a`` with time step ``T / steps``.

    The slope is the closed form for the linear law, or the shooting edge
    slope when ``phi`` is given (each stage then costs one shooting solve).
    """
    if not R0 > 0:
        raise ValueError(f"R0 must be positive, got {R0}")
    if phi is None:
        speed = lambda R: closed_form_slope(R, lam, p_M, a)  # noqa: E731
    else:
        speed = lambda R: abs(  # noqa: E731
            saturated_profile(R, lam, p_M, a, phi=phi, steps=shoot_steps).edge_slope
        ) / a
    if T == 0:
        return FrontSolution(np.zeros(1), np.array([float(R0)]), np.array([speed(R0)]))
    dt = T / steps
    t = np.linspace(0.0, T, steps + 1)
    R = np.empty(steps + 1)
    R[0] = R0
    for i in range(steps):
        r = R[i]
        k1 = speed(r)
        k2 = speed(r + 0.5 * dt * k1)
        k3 = speed(r + 0.5 * dt * k2)
        k4 = speed(r + dt * k3)
        R[i + 1] = r + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return FrontSolution(t, R, np.array([speed(r) for r in R]))


def oracle_parameters(spec: ProblemSpec) -> tuple[float, float, float, float]:
    """``(lam, p_M, a, b)`` for a constant-coefficient problem with ``Phi = lam (p_M - p)``.

    The growth law is verified on a few sample pressures rather than by
    matching the expression text.
    """
    if not spec.constant_coefficients():
        raise UnsupportedProblemError("the oracle needs constant a and b")
    from .exprlang import Env, evaluate

    a = float(evaluate(spec.a_expr, Env(x=0.0, y=0.0, t=0.0)))
    b = float(evaluate(spec.b_expr, Env(x=0.0, y=0.0, t=0.0)))
    rng = np.random.default_rng(0)
    pts = rng.uniform(-spec.L, spec.L, size=(6, 2))
    for (x, y), t in zip(pts, np.linspace(0, max(spec.T, 1e-9), 6)):
        for p in (0.0, 0.5 * spec.p_M, spec.p_M, 1.5 * spec.p_M):
            got = float(evaluate(spec.phi_expr, Env(x=x, y=y, t=t, p=p)))
            want = spec.lam * (spec.p_M - p)
            if abs(got - want) > 1e-9 * max(1.0, abs(want)):
                raise UnsupportedProblemError(
                    f"phi is not lam*(p_M - p) at x={x:.3g}, t={t:.3g}, p={p:.3g}: {got} vs {want}"
                )
    return spec.lam, spec.p_M, a, b


# ------------------------------------------------------------- m sweep


@dataclass(frozen=True)
class CauchyRow:
    m_low: float
    m_high: float
    du_L1: float
    dp_L1: float


@dataclass(frozen=True)
class CauchyTable:
    rows: tuple[CauchyRow, ...]
    ratio_u: float
    ratio_p: float

    @property
    def du(self) -> np.ndarray:
        return np.array([r.du_L1 for r in self.rows])

    @property
    def dp(self) -> np.ndarray:
        return np.array([r.dp_L1 for r in self.rows])

    def strictly_decreasing(self) -> tuple[bool, bool]:
        return bool(np.all(np.diff(self.du) < 0)), bool(np.all(np.diff(self.dp) < 0))

    def to_csv(self) -> str:
        lines = ["m_low,m_high,du_L1,dp_L1"]
        for r in self.rows:
            lines.append(",".join(go.FLOAT_FMT % v for v in (r.m_low, r.m_high, r.du_L1, r.dp_L1)))
        return "\n".join(lines) + "\n"


def _fitted_ratio(d: np.ndarray) -> float:
    if len(d) < 2:
        return float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        q = d[1:] / d[:-1]
    return float(np.median(q))


def l1_qt_difference(f: Sequence[np.ndarray], g: Sequence[np.ndarray], grid, times) -> float:
    integrals = [go.spatial_integral(x - y, grid, 1) for x, y in zip(f, g)]
    return go.spacetime_accumulate(integrals, np.diff(times), 1)


def _pressure_series(traj: Trajectory) -> list[np.ndarray]:
    from .model import DerivedCoefficients

    spec = traj.spec
    if spec.coefficients_time_dependent():
        bs = [DerivedCoefficients.build(spec, traj.grid, t).b for t in traj.times]
    else:
        bs = [DerivedCoefficients.build(spec, traj.grid, 0.0).b] * len(traj.times)
    return [pressure_from_density(u, b, traj.m) for u, b in zip(traj.snapshots, bs)]


def cauchy_table(trajectories: Sequence[Trajectory]) -> CauchyTable:
    """L1(Q_T) differences of u and p between consecutive runs."""
    if len(trajectories) < 2:
        raise ValueError("need at least two runs")
    ref = trajectories[0]
    for tr in trajectories[1:]:
        if tr.grid != ref.grid:
            raise ValueError(f"grid mismatch: m={tr.m:g} on {tr.grid}, m={ref.m:g} on {ref.grid}")
        if len(tr.times) != len(ref.times) or not np.array_equal(tr.times, ref.times):
            raise ValueError(f"snapshot times differ between m={ref.m:g} and m={tr.m:g}")
    pressures = [_pressure_series(tr) for tr in trajectories]
    rows = []
    for i in range(len(trajectories) - 1):
        lo, hi = trajectories[i], trajectories[i + 1]
        du = l1_qt_difference(lo.snapshots, hi.snapshots, ref.grid, ref.times)
        dp = l1_qt_difference(pressures[i], pressures[i + 1], ref.grid, ref.times)
        rows.append(CauchyRow(lo.m, hi.m, du, dp))
    table = CauchyTable(tuple(rows), 0.0, 0.0)
    return CauchyTable(table.rows, _fitted_ratio(table.du), _fitted_ratio(table.dp))


def m_sweep(
    spec: ProblemSpec,
    m_list: Sequence[float] | None = None,
    *,
    trajectories: Sequence[Trajectory] | None = None,
    jobs: int = 1,
) -> CauchyTable:
    """Run (or reuse) one simulation per m and tabulate consecutive L1(Q_T) differences."""
    if trajectories is None:
        ms = tuple(spec.m_list if m_list is None else m_list)
        trajectories = simulate_many(spec, ms, jobs=jobs)
    return cauchy_table(trajectories)


def barenblatt(x, t: float, m: float, d: int = 1, C: float = 1.0) -> np.ndarray:
    """Self-similar solution of ``u_t = lap(u^m)`` with ``|x|`` given as ``x`` (radius in 2D)."""
    alpha = d / (d * (m - 1.0) + 2.0)
    beta = alpha / d
    k = alpha * (m - 1.0) / (2.0 * m * d)
    r2 = np.asarray(x, dtype=float) ** 2
    core = np.maximum(C - k * r2 * t ** (-2.0 * beta), 0.0)
    return t ** (-alpha) * core ** (1.0 / (m - 1.0))


# -------------------------------------------------- front comparisons

TRANSIENT = 0.2


def front_position_error(front, oracle: FrontSolution, t_min: float = TRANSIENT) -> float:
    """Largest ``|R_measured - R_oracle| / R_oracle`` over snapshot times ``t >= t_min``."""
    sel = front.t >= t_min - 1e-12
    if not np.any(sel):
        return float("nan")
    ref = oracle.at(front.t[sel])
    return float(np.max(np.abs(front.R[sel] - ref) / ref))


def front_speed_error(
    front, lam: float, p_M: float, a: float, t_min: float = TRANSIENT
) -> float:
    """Largest relative gap between measured speed and the law evaluated at the measured R."""
    sel = front.t >= t_min - 1e-12
    if not np.any(sel):
        return float("nan")
    law = np.array([closed_form_slope(R, lam, p_M, a) for R in front.R[sel]])
    return float(np.max(np.abs(front.v_measured[sel] / law - 1.0)))


def matched_speed_ratio(front_num, front_den, t_min_num: float, t_min_den: float) -> np.ndarray:
    """Speed ratio of two runs compared where their fronts sit at the same position.

    Each series is restricted to its own window ``t >= t_min`` and the
    denominator speed is interpolated in R at the numerator's positions
    inside the common R range.
    """
    sn = front_num.t >= t_min_num - 1e-12
    sd = front_den.t >= t_min_den - 1e-12
    Rn, vn = front_num.R[sn], front_num.v_measured[sn]
    Rd, vd = front_den.R[sd], front_den.v_measured[sd]
    if Rn.size == 0 or Rd.size < 2:
        return np.array([])
    order = np.argsort(Rd)
    Rd, vd = Rd[order], vd[order]
    inside = (Rn >= Rd[0]) & (Rn <= Rd[-1])
    return vn[inside] / np.interp(Rn[inside], Rd, vd)
