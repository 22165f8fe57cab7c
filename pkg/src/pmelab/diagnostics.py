"""Quantities measured on completed trajectories.

Everything here is a pure function of a :class:`~pmelab.pme_solver.Trajectory`.
Space-time norms integrate over the snapshot times with the trapezoid rule,
and time derivatives are centered differences between snapshots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import grid_ops as go
from .exprlang import free_variables
from .model import (
    GUARD_CELLS,
    DerivedCoefficients,
    ab_guaranteed,
    ab_m_threshold,
    pressure_from_density,
)
from .pme_solver import Trajectory, support_radius

DEFAULT_LEVEL = 1e-3


def pressure_field(u: np.ndarray, b, m: float) -> np.ndarray:
    return pressure_from_density(u, b, m)


def omega_field(p: np.ndarray, coeffs: DerivedCoefficients) -> np.ndarray:
    """``div((b/a) grad p) + (b/a) Phi(p) - dt b``."""
    return go.flux_divergence(coeffs.ba, p, coeffs.grid) + coeffs.phi_bar(p)


def w_field(p: np.ndarray, coeffs: DerivedCoefficients) -> np.ndarray:
    """``(a/b) div((b/a) grad p) + Phi~(p)``.

    In the continuum this equals ``lap p + gamma . grad p + Phi~(p)``; the
    divergence form shares its stencil with :func:`omega_field`, so for
    ``a = b = 1`` the two fields coincide exactly.
    """
    div = go.flux_divergence(coeffs.ba, p, coeffs.grid)
    return (coeffs.a / coeffs.b) * div + coeffs.phi_tilde(p)


def w_field_drift_form(p: np.ndarray, coeffs: DerivedCoefficients) -> np.ndarray:
    """``lap p + gamma . grad p + Phi~(p)`` with the grid Laplacian and centered gradient."""
    grid = coeffs.grid
    drift = np.sum(coeffs.gamma * go.gradient(p, grid), axis=0)
    return go.laplacian(p, grid) + drift + coeffs.phi_tilde(p)


class _Coefficients:
    """Coefficient fields per snapshot time, built once when time-independent."""

    def __init__(self, traj: Trajectory):
        self.traj = traj
        self.static = not traj.spec.coefficients_time_dependent()
        self._cache: dict[float, DerivedCoefficients] = {}

    def at(self, t: float) -> DerivedCoefficients:
        key = 0.0 if self.static else float(t)
        if key not in self._cache:
            co = DerivedCoefficients.build(self.traj.spec, self.traj.grid, t)
            self._cache[key] = co
        co = self._cache[key]
        if self.static and co.t != t:
            # Phi may still depend on t
            co = DerivedCoefficients(
                co.spec, co.grid, float(t), co.a, co.b, co.gamma, co.dt_b, co.lap_log_ba, co.coords
            )
        return co


def _pressures(traj: Trajectory, coeffs: _Coefficients) -> list[np.ndarray]:
    return [
        pressure_field(u, coeffs.at(t).b, traj.m) for t, u in zip(traj.times, traj.snapshots)
    ]


def _time_integral(traj: Trajectory, integrals, p: int = 1) -> float:
    return go.spacetime_accumulate(integrals, np.diff(traj.times), p)


def _time_derivative(fields: list[np.ndarray], times: np.ndarray) -> list[np.ndarray]:
    if len(fields) < 2:
        return [np.zeros_like(f) for f in fields]
    stack = np.stack(fields)
    return list(np.gradient(stack, times, axis=0))


def complementarity_residual(traj: Trajectory) -> float:
    """``|| (1 - u/b) p ||_L1(Q_T)``."""
    co = _Coefficients(traj)
    grid = traj.grid
    integrals = []
    for t, u in zip(traj.times, traj.snapshots):
        b = co.at(t).b
        p = pressure_field(u, b, traj.m)
        integrals.append(go.spatial_integral((1.0 - u / b) * p, grid, 1))
    return _time_integral(traj, integrals)


@dataclass
class ResidualSeries:
    times: np.ndarray
    l1: np.ndarray
    fields: list[np.ndarray]


def pressure_equation_residual(traj: Trajectory) -> ResidualSeries:
    """L1 norm per interior snapshot of ``dt p - |grad p|^2/a - (m-1)(p/b) omega``."""
    if len(traj.times) < 3:
        raise ValueError("need at least 3 snapshots for centered time differences")
    co = _Coefficients(traj)
    grid = traj.grid
    m = traj.m
    ps = _pressures(traj, co)
    out, fields = [], []
    for k in range(1, len(ps) - 1):
        c = co.at(traj.times[k])
        p = ps[k]
        dtp = (ps[k + 1] - ps[k - 1]) / (traj.times[k + 1] - traj.times[k - 1])
        grad2 = go.pointwise_magnitude(go.gradient(p, grid)) ** 2
        res = dtp - grad2 / c.a - (m - 1) * (p / c.b) * omega_field(p, c)
        fields.append(res)
        out.append(go.spatial_integral(res, grid, 1))
    return ResidualSeries(np.asarray(traj.times[1:-1]), np.asarray(out), fields)


# ---------------------------------------------------------------- fronts


@dataclass
class FrontSeries:
    t: np.ndarray
    R: np.ndarray
    v_measured: np.ndarray
    v_predicted: np.ndarray

    def __len__(self):
        return len(self.t)

    def to_csv(self) -> str:
        lines = ["t,R,v_measured,v_predicted"]
        for row in zip(self.t, self.R, self.v_measured, self.v_predicted):
            lines.append(",".join(f"{v:.17g}" for v in row))
        return "\n".join(lines) + "\n"


def _ray(f: np.ndarray, grid: go.Grid) -> np.ndarray:
    """Values along the positive x-axis (cells with x > 0)."""
    half = grid.n // 2
    if grid.dim == 1:
        return f[half:]
    if grid.n % 2:
        return f[half:, half]
    return 0.5 * (f[half:, half - 1] + f[half:, half])


def front_position(u: np.ndarray, p: np.ndarray, grid: go.Grid, level: float):
    """Outermost crossing of ``p = level`` on the positive x-ray.

    The crossing brackets the front between the last cell with ``p > level``
    and the next one; inside that gap the front is placed by the fill
    fraction of the cells beyond, relative to the last pressurized cell.
    Returns (position, index of the last pressurized ray cell) or None.
    """
    pr = _ray(p, grid)
    above = np.nonzero(pr > level)[0]
    if above.size == 0:
        return None
    i = int(above[-1])
    ur = _ray(u, grid)
    xr = grid.centers[grid.n // 2 :]
    if i + 1 >= len(pr):
        return float(xr[i]), i
    fill = float(np.sum(ur[i + 1 :]) / ur[i])
    return float(xr[i] + grid.h * (0.5 + min(fill, 1.0))), i


def front_position_linear(p: np.ndarray, grid: go.Grid, level: float) -> float | None:
    """Outermost crossing of ``p = level`` by linear interpolation of ``p`` between cells."""
    pr = _ray(p, grid)
    above = np.nonzero(pr > level)[0]
    if above.size == 0:
        return None
    i = int(above[-1])
    xr = grid.centers[grid.n // 2 :]
    if i + 1 >= len(pr):
        return float(xr[i])
    return float(xr[i] + grid.h * (pr[i] - level) / (pr[i] - pr[i + 1]))


def front_kinematics(traj: Trajectory, level: float | None = None) -> FrontSeries:
    """Front position, measured speed and predicted speed ``|grad p|/a`` per snapshot.

    Only for 1D or radially symmetric 2D runs. Speeds are centered differences
    of position between snapshots where a front exists; the prediction is
    sampled one cell inside the last pressurized cell.
    """
    if level is None:
        level = DEFAULT_LEVEL * traj.spec.p_M
    co = _Coefficients(traj)
    grid = traj.grid
    ts, Rs, pred = [], [], []
    for t, u in zip(traj.times, traj.snapshots):
        c = co.at(t)
        p = pressure_field(u, c.b, traj.m)
        found = front_position(u, p, grid, level)
        if found is None:
            continue
        R, i = found
        j = max(i - 1, 0)
        speed = go.pointwise_magnitude(go.gradient(p, grid)) / c.a
        pred.append(float(_ray(speed, grid)[j]))
        ts.append(float(t))
        Rs.append(R)
    ts, Rs = np.asarray(ts), np.asarray(Rs)
    if len(ts) >= 2:
        v = np.gradient(Rs, ts)
    else:
        v = np.full(len(ts), np.nan)
    return FrontSeries(ts, Rs, v, np.asarray(pred))


# ---------------------------------------------------------------- report


NORM_NAMES = (
    "sup_p",
    "grad_p_L1",
    "grad_p_L2",
    "grad_p_L4",
    "lap_p_L1",
    "w_neg_L3",
    "dt_u_L1",
    "grad_u_L1",
    "dt_p_L1",
    "complementarity",
)


class NonFiniteReportError(ValueError):
    pass


@dataclass
class DiagnosticsReport:
    m: float
    norms: dict[str, float]
    ab_threshold: float
    ab_guaranteed: bool
    support_times: np.ndarray
    support_radius: np.ndarray
    front: FrontSeries
    residual: ResidualSeries | None
    front_sensitivity: dict[str, float] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> float:
        return self.norms[name]

    def rows(self) -> list[tuple[str, float]]:
        rows = [(k, self.norms[k]) for k in NORM_NAMES]
        rows.append(("ab_threshold", self.ab_threshold))
        rows.append(("ab_guaranteed", 1.0 if self.ab_guaranteed else 0.0))
        rows.extend(sorted(self.front_sensitivity.items()))
        return rows

    def to_csv(self) -> str:
        rows = self.rows()
        bad = [k for k, v in rows if not math.isfinite(v)]
        if bad:
            raise NonFiniteReportError(f"report for m={self.m:g} has non-finite entries: {bad}")
        return "name,value\n" + "".join(f"{k},{v:.17g}\n" for k, v in rows)


def estimate_norms(traj: Trajectory, ab_threshold: float | None = None) -> DiagnosticsReport:
    """Every estimate norm of one run, plus support, front and residual series."""
    grid = traj.grid
    spec = traj.spec
    co = _Coefficients(traj)
    times = traj.times
    m = traj.m
    us = traj.snapshots
    ps = _pressures(traj, co)

    gp1, gp2, gp4, lap1, wneg3, gu1, comp = [], [], [], [], [], [], []
    for t, u, p in zip(times, us, ps):
        c = co.at(t)
        gp = go.gradient(p, grid)
        gp1.append(go.spatial_integral(gp, grid, 1))
        gp2.append(go.spatial_integral(gp, grid, 2))
        gp4.append(go.spatial_integral(gp, grid, 4))
        lap1.append(go.spatial_integral(go.laplacian(p, grid), grid, 1))
        wneg3.append(go.spatial_integral(go.negative_part(w_field(p, c)), grid, 3))
        gu1.append(go.spatial_integral(go.gradient(u, grid), grid, 1))
        comp.append(go.spatial_integral((1.0 - u / c.b) * p, grid, 1))
    dtu1 = [go.spatial_integral(f, grid, 1) for f in _time_derivative(us, times)]
    dtp1 = [go.spatial_integral(f, grid, 1) for f in _time_derivative(ps, times)]

    acc = lambda vals, q=1: _time_integral(traj, vals, q)
    norms = {
        "sup_p": max(traj.max_sup_p, max(float(p.max()) for p in ps)),
        "grad_p_L1": acc(gp1),
        "grad_p_L2": acc(gp2, 2),
        "grad_p_L4": acc(gp4, 4),
        "lap_p_L1": acc(lap1),
        "w_neg_L3": acc(wneg3, 3),
        "dt_u_L1": acc(dtu1),
        "grad_u_L1": acc(gu1),
        "dt_p_L1": acc(dtp1),
        "complementarity": acc(comp),
    }
    bad = [k for k, v in norms.items() if not math.isfinite(v)]
    if bad:
        raise NonFiniteReportError(f"non-finite norms for m={m:g}: {bad}")

    notes = []
    bg = traj.epsilon
    radii = np.array([support_radius(u, grid, float(u.min()) if bg > 0 else 0.0) for u in us])
    limit = grid.L - GUARD_CELLS * grid.h
    if np.any(radii >= limit):
        raise ValueError("support left the integration box; Omega_T is not contained in it")
    notes.append("Omega_T is the whole box; lap p is taken on the raw stencil across the front")
    if ab_threshold is None:
        ab_threshold = ab_m_threshold(spec)
    guaranteed = ab_guaranteed(m, ab_threshold)
    if not guaranteed:
        notes.append(f"m={m:g} is at or below the AB threshold {ab_threshold:.6g}")

    front = front_kinematics(traj) if _front_geometry_ok(spec) else FrontSeries(*[np.array([])] * 4)
    sens = {}
    if len(front):
        base = traj.spec.p_M * DEFAULT_LEVEL
        for tag, factor in (("x10", 10.0), ("div10", 0.1)):
            other = front_kinematics(traj, base * factor)
            common = np.intersect1d(front.t, other.t)
            if common.size:
                a = front.R[np.isin(front.t, common)]
                b = other.R[np.isin(other.t, common)]
                sens[f"front_shift_level_{tag}"] = float(np.max(np.abs(a - b)))
    residual = pressure_equation_residual(traj) if len(times) >= 3 else None
    return DiagnosticsReport(
        m=m,
        norms=norms,
        ab_threshold=ab_threshold,
        ab_guaranteed=guaranteed,
        support_times=np.asarray(times),
        support_radius=radii,
        front=front,
        residual=residual,
        front_sensitivity=sens,
        notes=notes,
    )


def _front_geometry_ok(spec) -> bool:
    """1D, or 2D with a, b and the initial data written in terms of r only."""
    if spec.dim == 1:
        return True
    return all(
        not ({"x", "y"} & free_variables(e)) for e in (spec.a_expr, spec.b_expr, spec.initial_expr)
    )


def holder_consistent(report: DiagnosticsReport, grid: go.Grid, T: float) -> bool:
    """``||grad p||_L1 <= ||grad p||_L2 |Omega_T|^(1/2)`` (with rounding slack)."""
    vol = grid.volume * T
    lhs = report["grad_p_L1"]
    rhs = report["grad_p_L2"] * math.sqrt(vol)
    return lhs <= rhs * (1 + 1e-12) + 1e-300
