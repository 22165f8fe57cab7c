"""Explicit finite-volume solver for the heterogeneous porous medium equation with growth.

The density form is advanced: the face flux is ``(b/a)_face * jump(v^m) / h``
with ``v = u/b``, and the growth source ``(u/a) Phi(x, t, p)`` is added
cellwise. Time steps satisfy the explicit diffusion bound, which also makes
the update monotone (discrete comparison principle).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exprlang import compile_expr, evaluate
from .grid_ops import Grid, face_coefficients
from .model import (
    GUARD_CELLS,
    DerivedCoefficients,
    ProblemSpec,
    _env,
    _on_grid,
    ab_guaranteed,
    ab_m_threshold,
    initial_density_in,
)

log = logging.getLogger(__name__)

TOL_CEILING = 0.05
CLAMP_TOL = 1e-12
SUPPORT_REL_TOL = 1e-12
REACTION_CAP = 0.1


class SolverError(RuntimeError):
    pass


class SupportBoundaryError(SolverError):
    pass


class NonFiniteError(SolverError):
    pass


@dataclass
class State:
    t: float
    u: np.ndarray
    m: float


@dataclass
class Trajectory:
    """Snapshots plus per-step telemetry of one run."""

    spec: ProblemSpec
    m: float
    times: np.ndarray
    snapshots: list[np.ndarray]
    dts: np.ndarray  # every accepted step
    steps: dict[str, np.ndarray]  # t, dt, mass, sup_p, support_radius, clamped_mass
    max_sup_p: float = 0.0
    max_clamp_ratio: float = 0.0
    ceiling_violations: int = 0
    initial_support_radius: float = 0.0
    epsilon: float = 0.0
    warnings: list[str] = field(default_factory=list)

    @property
    def grid(self) -> Grid:
        return self.spec.grid

    @property
    def n_steps(self) -> int:
        return len(self.dts)

    @property
    def final(self) -> State:
        return State(float(self.times[-1]), self.snapshots[-1], self.m)


def support_radius(u: np.ndarray, grid: Grid, background: float = 0.0) -> float:
    """Largest cell-center radius where ``u`` rises above background by ``1e-12 sup u``.

    Zero when nothing rises above the threshold.
    """
    excess = u - background
    top = float(np.max(excess))
    if top <= 0:
        return 0.0
    mask = excess > SUPPORT_REL_TOL * top
    return float(np.max(grid.radius[mask]))


def _guard_band_max(excess: np.ndarray, dim: int, ring_only: bool = False) -> float:
    """Largest value in the guard band, or only on its innermost ring.

    The support moves at most one cell per step, so checking the inner ring
    every step is enough to catch it entering the band.
    """
    g = GUARD_CELLS
    if dim == 1:
        if ring_only:
            return max(float(excess[g - 1]), float(excess[-g]))
        return max(float(excess[:g].max()), float(excess[-g:].max()))
    sl = slice(g - 1, g) if ring_only else slice(0, g)
    sr = slice(-g, -g + 1) if ring_only else slice(-g, None)
    return max(
        float(excess[sl].max()),
        float(excess[sr].max()),
        float(excess[:, sl].max()),
        float(excess[:, sr].max()),
    )


class _Integrator:
    """Holds frozen coefficient fields and evaluates the right-hand side."""

    def __init__(self, spec: ProblemSpec, m: float, t0: float = 0.0, coeffs=None):
        self.spec = spec
        self.m = float(m)
        self.grid = spec.grid
        self.time_dependent = spec.coefficients_time_dependent()
        self._phi = compile_expr(spec.phi_expr)
        self._buf = np.zeros(tuple(n + 2 for n in self.grid.shape))
        self._set_coefficients(t0, coeffs)

    def _set_coefficients(self, t: float, co: DerivedCoefficients | None = None):
        if co is None:
            co = DerivedCoefficients.build(self.spec, self.grid, t)
        self.coeffs = co
        self.coef_t = t
        self.inv_a = 1.0 / co.a
        self.inv_b = 1.0 / co.b
        self.inf_a = float(co.a.min())
        self.faces = face_coefficients(co.ba, self.grid)
        # faces pre-divided by h^2 for the flux kernel; the box walls carry no
        # flux, so mass telescopes exactly and constant states stay fixed
        faces_h2 = []
        for axis, f in enumerate(self.faces):
            f = f / self.grid.h**2
            wall = [slice(None)] * f.ndim
            for end in (0, -1):
                wall[axis] = end
                f[tuple(wall)] = 0.0
            faces_h2.append(f)
        self._faces_h2 = tuple(faces_h2)

    def refresh(self, t: float):
        if self.time_dependent and t != self.coef_t:
            self._set_coefficients(t)

    def phi(self, p: np.ndarray, t: float) -> np.ndarray:
        value = self._phi(_env(self.grid.coords, t, p))
        if isinstance(value, np.ndarray) and value.shape == p.shape:
            return value
        return _on_grid(value, p.shape)

    def tendency(self, u: np.ndarray, t: float):
        """Return (du/dt, max diffusivity m v^(m-1)/a, sup |Phi|, sup p)."""
        m = self.m
        v = u * self.inv_b
        vm1 = v ** (m - 1.0)
        p = (m / (m - 1.0)) * vm1
        phi = self.phi(p, t)
        rate = self._flux_divergence(vm1 * v)
        rate += u * self.inv_a * phi
        diffusivity = m * float((vm1 * self.inv_a).max())
        return rate, diffusivity, float(np.abs(phi).max()), float(p.max())

    def _flux_divergence(self, f: np.ndarray) -> np.ndarray:
        # same stencil as grid_ops.flux_divergence, without the allocation overhead
        buf = self._buf
        if self.grid.dim == 1:
            buf[1:-1] = f
            flux = self._faces_h2[0] * (buf[1:] - buf[:-1])
            return flux[1:] - flux[:-1]
        buf[1:-1, 1:-1] = f
        fx = self._faces_h2[0] * (buf[1:, 1:-1] - buf[:-1, 1:-1])
        fy = self._faces_h2[1] * (buf[1:-1, 1:] - buf[1:-1, :-1])
        out = fx[1:] - fx[:-1]
        out += fy[:, 1:] - fy[:, :-1]
        return out

    def dt_bound(self, diffusivity: float, sup_phi: float) -> float:
        d = self.grid.dim
        h2 = self.grid.h**2
        cfl = self.spec.cfl
        if diffusivity > 0:
            dt = cfl * h2 / (2 * d * diffusivity)
        else:
            dt = cfl * h2 * self.inf_a / (2 * d * self.m)
        if sup_phi > 0:
            dt = min(dt, REACTION_CAP * self.inf_a / sup_phi)
        return dt


def stable_dt(state: State, coeffs: DerivedCoefficients, cfl: float | None = None) -> float:
    """Explicit step bound for ``state``; ``cfl`` defaults to the problem's."""
    spec = coeffs.spec if cfl is None else coeffs.spec.with_(cfl=cfl)
    integ = _Integrator(spec, state.m, coeffs.t, coeffs)
    _, diffusivity, sup_phi, _ = integ.tendency(state.u, state.t)
    return integ.dt_bound(diffusivity, sup_phi)


def step(state: State, coeffs: DerivedCoefficients, dt: float) -> State:
    """One forward-Euler finite-volume step with coefficients ``coeffs``, clamped at zero."""
    integ = _Integrator(coeffs.spec, state.m, coeffs.t, coeffs)
    rate, *_ = integ.tendency(state.u, state.t)
    u_new, _, _ = _advance(state.u, rate, dt, integ.grid)
    return State(state.t + dt, u_new, state.m)


def _advance(u: np.ndarray, rate: np.ndarray, dt: float, grid: Grid):
    """Forward-Euler update clamped at zero: (u_new, clamped mass, max u_new)."""
    u_new = u + dt * rate
    top = float(u_new.max())
    if not np.isfinite(top):
        bad = np.argwhere(~np.isfinite(u_new))[0]
        raise NonFiniteError(f"non-finite density at cell {tuple(int(i) for i in bad)}")
    clamped = 0.0
    if float(u_new.min()) < 0.0:
        neg = u_new < 0.0
        clamped = float(-u_new[neg].sum()) * grid.cell_volume
        u_new[neg] = 0.0
    return u_new, clamped, top


def initial_density(spec: ProblemSpec, m: float) -> np.ndarray:
    grid = spec.grid
    env = _env(grid.coords, 0.0)
    if float(np.min(evaluate(spec.initial_expr, env))) < 0:
        raise SolverError(f"initial {spec.initial_key} has negative values")
    return _on_grid(initial_density_in(spec, env, m), grid.shape)


class _Recorder:
    def __init__(self, T: float, points: int):
        self.next_t = 0.0
        self.interval = T / points if T > 0 else np.inf
        self.rows = {k: [] for k in ("t", "dt", "mass", "sup_p", "support_radius", "clamped_mass")}

    def due(self, t: float, force: bool) -> bool:
        return force or t >= self.next_t

    def add(self, t, dt, mass, sup_p, radius, clamped):
        for k, v in zip(self.rows, (t, dt, mass, sup_p, radius, clamped)):
            self.rows[k].append(v)
        while self.next_t <= t:
            self.next_t += self.interval

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: np.asarray(v, dtype=float) for k, v in self.rows.items()}


def simulate(
    spec: ProblemSpec,
    m: float,
    *,
    u_init: np.ndarray | None = None,
    max_steps: int = 50_000_000,
    record_points: int = 1024,
) -> Trajectory:
    """Advance from ``u0 + epsilon_lift`` over ``[0, T]``.

    Snapshots are taken at ``spec.snapshots`` equal intervals (both ends
    included); steps are shortened to land on them exactly. Per-step rows
    are kept roughly every ``T / record_points`` and at every snapshot.
    """
    grid = spec.grid
    u = initial_density(spec, m) if u_init is None else np.array(u_init, dtype=float)
    eps = spec.epsilon_lift
    if eps > 0:
        u = u + eps
    integ = _Integrator(spec, m)
    T = spec.T
    snap_times = np.linspace(0.0, T, spec.snapshots + 1) if T > 0 else np.zeros(1)

    t = 0.0
    dts: list[float] = []
    snapshots = [u.copy()]
    rec = _Recorder(T, record_points)
    max_clamp = 0.0
    max_sup_p = 0.0
    violations = 0
    warnings: list[str] = []
    ceiling = spec.p_M * (1 + TOL_CEILING)
    threshold = ab_m_threshold(spec)
    if not ab_guaranteed(m, threshold):
        warnings.append(f"m={m:g} is at or below the AB threshold {threshold:.6g}")

    def background(arr):
        return float(arr.min()) if eps > 0 else 0.0

    r0 = support_radius(u, grid, background(u))
    rate, diffusivity, sup_phi, sup_p = integ.tendency(u, t)
    max_sup_p = sup_p
    rec.add(t, 0.0, float(u.sum()) * grid.cell_volume, sup_p, r0, 0.0)
    k_snap = 1
    while k_snap < len(snap_times):
        if len(dts) >= max_steps:
            raise SolverError(f"step limit {max_steps} reached at t={t:.6g}")
        target = snap_times[k_snap]
        dt = integ.dt_bound(diffusivity, sup_phi)
        landing = t + dt >= target * (1 - 1e-14)
        if landing:
            dt = target - t
        u_old = u
        u, clamped, umax = _advance(u, rate, dt, grid)
        t = float(target) if landing else t + dt
        dts.append(dt)
        if clamped > 0:
            ratio = clamped / max(float(u_old.sum()) * grid.cell_volume, 1e-300)
            max_clamp = max(max_clamp, ratio)
        bg = background(u)
        if umax > bg and _guard_band_max(u, grid.dim, ring_only=not landing) - bg > (
            SUPPORT_REL_TOL * (umax - bg)
        ):
            raise SupportBoundaryError(
                f"support reached the {GUARD_CELLS}-cell guard band at t={t:.6g}"
            )
        integ.refresh(t)
        rate, diffusivity, sup_phi, sup_p = integ.tendency(u, t)
        if sup_p > max_sup_p:
            max_sup_p = sup_p
        if sup_p > ceiling:
            violations += 1
        if landing:
            snapshots.append(u.copy())
            k_snap += 1
        if rec.due(t, landing):
            rec.add(
                t, dt, float(u.sum()) * grid.cell_volume, sup_p,
                support_radius(u, grid, bg), clamped,
            )

    if violations:
        warnings.append(
            f"pressure exceeded p_M*(1+{TOL_CEILING}) on {violations} steps (max {max_sup_p:.6g})"
        )
    if max_clamp > CLAMP_TOL:
        warnings.append(f"clamped mass ratio {max_clamp:.3g} exceeds {CLAMP_TOL}")
    for w in warnings:
        log.warning("m=%g: %s", m, w)
    return Trajectory(
        spec=spec,
        m=float(m),
        times=snap_times,
        snapshots=snapshots,
        dts=np.asarray(dts),
        steps=rec.arrays(),
        max_sup_p=max_sup_p,
        max_clamp_ratio=max_clamp,
        ceiling_violations=violations,
        initial_support_radius=r0,
        epsilon=eps,
        warnings=warnings,
    )


@dataclass
class ComparisonResult:
    low: list[np.ndarray]
    high: list[np.ndarray]
    times: np.ndarray
    violation: float


def comparison_pair(
    spec: ProblemSpec, m: float, u0_low: np.ndarray, u0_high: np.ndarray
) -> ComparisonResult:
    """Run two ordered initial data in lockstep and measure ``max (u_low - u_high)_+``.

    Both runs take the same steps (the smaller of the two stable bounds), so
    the monotone update keeps them ordered up to rounding.
    """
    u_lo = np.array(u0_low, dtype=float)
    u_hi = np.array(u0_high, dtype=float)
    if np.any(u_lo > u_hi):
        raise ValueError("u0_low must not exceed u0_high")
    grid = spec.grid
    integ = _Integrator(spec, m)
    T = spec.T
    snap_times = np.linspace(0.0, T, spec.snapshots + 1) if T > 0 else np.zeros(1)
    t = 0.0
    lows, highs = [u_lo.copy()], [u_hi.copy()]
    violation = 0.0
    k = 1
    while k < len(snap_times):
        r_lo, d_lo, s_lo, _ = integ.tendency(u_lo, t)
        r_hi, d_hi, s_hi, _ = integ.tendency(u_hi, t)
        dt = min(integ.dt_bound(d_lo, s_lo), integ.dt_bound(d_hi, s_hi))
        landing = t + dt >= snap_times[k] * (1 - 1e-14)
        if landing:
            dt = snap_times[k] - t
        u_lo, _, _ = _advance(u_lo, r_lo, dt, grid)
        u_hi, _, _ = _advance(u_hi, r_hi, dt, grid)
        t = float(snap_times[k]) if landing else t + dt
        violation = max(violation, float(np.max(u_lo - u_hi)), 0.0)
        integ.refresh(t)
        if landing:
            lows.append(u_lo.copy())
            highs.append(u_hi.copy())
            k += 1
    return ComparisonResult(lows, highs, snap_times, violation)


def _simulate_task(args) -> Trajectory:
    spec, m = args
    return simulate(spec, m)


def simulate_many(spec: ProblemSpec, ms, jobs: int = 1) -> list[Trajectory]:
    """One run per m, in the order given. ``jobs > 1`` uses worker processes."""
    ms = [float(m) for m in ms]
    if jobs <= 1 or len(ms) <= 1:
        return [simulate(spec, m) for m in ms]
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=min(jobs, len(ms))) as pool:
        return list(pool.map(_simulate_task, [(spec, m) for m in ms]))
