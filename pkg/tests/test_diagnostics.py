import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmelab import grid_ops as go
from pmelab.diagnostics import (
    DiagnosticsReport,
    NonFiniteReportError,
    complementarity_residual,
    estimate_norms,
    front_kinematics,
    holder_consistent,
    omega_field,
    pressure_equation_residual,
    pressure_field,
    w_field,
    w_field_drift_form,
)
from pmelab.model import DerivedCoefficients, ProblemSpec, standard_case
from pmelab.pme_solver import Trajectory, simulate


def make(**kw):
    base = dict(
        L=2.0, T=1.0, a="1", b="1", phi="1 - p", u0="0.9*max(0, 1 - (x/0.5)^2)",
        lam=1.0, p_M=1.0, Lambda=2.0, tilde_lambda=1.0, m_list=(10,), n=64, snapshots=8,
    )
    base.update(kw)
    return ProblemSpec(**base)


def fake_trajectory(spec, m, fields, times=None):
    times = np.linspace(0, spec.T, len(fields)) if times is None else np.asarray(times)
    return Trajectory(
        spec=spec, m=float(m), times=times, snapshots=[np.asarray(f, float) for f in fields],
        dts=np.diff(times), steps={},
    )


# ------------------------------------------------------------ pressure


def test_pressure_field_examples():
    assert np.all(pressure_field(np.zeros(4), 1.0, 10) == 0)
    b = np.array([0.5, 1.0, 2.0])
    np.testing.assert_allclose(pressure_field(b, b, 7), 7 / 6, rtol=1e-15)
    assert pressure_field(0.9, 1.0, 40) == pytest.approx(40 / 39 * 0.9**39, rel=1e-12)
    # the rounded figure 0.0166 is within 2% of the exact 0.016844
    assert pressure_field(0.9, 1.0, 40) == pytest.approx(0.0166, rel=0.02)


# ------------------------------------------------------------ w and omega


def test_w_of_zero_pressure_is_phi():
    s = make(a="1 + 0.3*cos(x)", b="2 + sin(x)", phi="1 + 0.5*x - p")
    co = DerivedCoefficients.build(s)
    x = s.grid.centers
    np.testing.assert_allclose(w_field(np.zeros(64), co), 1 + 0.5 * x, atol=1e-9)


def test_w_of_downward_parabola():
    s = make(n=128)
    co = DerivedCoefficients.build(s)
    x = s.grid.centers
    p = -(x**2) / 2
    w = w_field(p, co)
    np.testing.assert_allclose(w[1:-1], (-1 + 1 - p)[1:-1], atol=1e-9)


def test_omega_of_zero_pressure():
    s = make(a="1 + 0.3*cos(x)", b="2 + sin(x)", phi="1 - p")
    co = DerivedCoefficients.build(s)
    np.testing.assert_allclose(omega_field(np.zeros(64), co), co.b / co.a, atol=1e-9)


def test_omega_with_constant_ratio():
    s = make(a="1", b="2", n=64)
    co = DerivedCoefficients.build(s)
    x = s.grid.centers
    p = 0.3 - x**2
    om = omega_field(p, co)
    np.testing.assert_allclose(om[1:-1], (2 * -2 + 2 * (1 - p))[1:-1], atol=1e-9)


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_w_equals_omega_bitwise_for_unit_coefficients(seed):
    s = make(n=32)
    co = DerivedCoefficients.build(s)
    p = np.random.default_rng(seed).uniform(0, 1, 32)
    assert np.array_equal(w_field(p, co), omega_field(p, co))


def test_w_omega_identity():
    s = make(a="1 + 0.3*cos(x)", b="2 + sin(x)*exp(-t)", n=128)
    co = DerivedCoefficients.build(s, t=0.4)
    x = s.grid.centers
    p = np.exp(-(x**2))
    ratio = co.a / co.b
    lhs = ratio * omega_field(p, co) + (co.phi_tilde(p) - ratio * co.phi_bar(p))
    np.testing.assert_allclose(lhs, w_field(p, co), atol=1e-8)


def test_divergence_and_drift_forms_agree_on_smooth_data():
    errs = []
    for n in (128, 256):
        s = make(a="1 + 0.3*cos(x)", b="2 + sin(x)", n=n)
        co = DerivedCoefficients.build(s)
        x = s.grid.centers
        p = np.exp(-4 * x**2)
        gap = np.abs(w_field(p, co) - w_field_drift_form(p, co))[2:-2]
        errs.append(gap.max())
    assert errs[1] < 0.3 * errs[0]
    assert errs[1] < 1e-3


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_negative_part_cube_identity_on_w(seed):
    s = make(n=64)
    co = DerivedCoefficients.build(s)
    p = np.random.default_rng(seed).uniform(0, 1, 64)
    w = w_field(p, co)
    n = go.negative_part(w)
    lhs = go.spatial_integral(n, s.grid, 3) + np.sum(w * n**2) * s.grid.h
    assert abs(lhs) <= 1e-10 * max(1.0, go.spatial_integral(n, s.grid, 3))


# ------------------------------------------------------------ complementarity


def test_complementarity_saturated_support_is_zero():
    s = make(T=1.0)
    u = np.where(np.abs(s.grid.centers) < 0.5, 1.0, 0.0)
    assert complementarity_residual(fake_trajectory(s, 10, [u, u, u])) == 0


def test_complementarity_zero_pressure_is_zero():
    s = make()
    assert complementarity_residual(fake_trajectory(s, 10, [np.zeros(64)] * 3)) == 0


@given(seed=st.integers(0, 2**32 - 1))
@settings(max_examples=20, deadline=None)
def test_complementarity_nonnegative(seed):
    s = make()
    rng = np.random.default_rng(seed)
    fields = [rng.uniform(0, 1, 64) for _ in range(3)]
    assert complementarity_residual(fake_trajectory(s, 10, fields)) >= 0


def test_complementarity_decays_on_standard_case(standard_runs):
    r10 = complementarity_residual(standard_runs[10])
    r40 = complementarity_residual(standard_runs[40])
    assert r40 < 0.5 * r10


# ------------------------------------------------------------ pressure equation residual


def test_residual_of_zero_trajectory():
    s = make()
    rs = pressure_equation_residual(fake_trajectory(s, 10, [np.zeros(64)] * 4))
    assert np.all(rs.l1 == 0)


def test_residual_of_saturated_steady_state():
    s = make()
    m = 10.0
    # p = 1 solves Phi(p) = 0; every derivative vanishes away from the box walls
    v = ((m - 1) / m) ** (1 / (m - 1))
    u = np.full(64, v)
    rs = pressure_equation_residual(fake_trajectory(s, m, [u] * 3))
    assert np.max(np.abs(rs.fields[0][1:-1])) <= 1e-6


def test_residual_needs_three_snapshots():
    with pytest.raises(ValueError):
        pressure_equation_residual(fake_trajectory(make(), 10, [np.zeros(64)] * 2))


def test_residual_localizes_at_the_front():
    # dense snapshots so the time difference of p is not the dominant error
    tr = simulate(standard_case(T=0.5, snapshots=1024), 40)
    rs = pressure_equation_residual(tr)
    fr = front_kinematics(tr)
    x, h = tr.grid.centers, tr.grid.h
    fractions = []
    for t, f in zip(rs.times, rs.fields):
        if t < 0.1:
            continue
        R = fr.R[np.argmin(np.abs(fr.t - t))]
        near = np.abs(np.abs(x) - R) <= 3 * h
        fractions.append(np.abs(f[near]).sum() / np.abs(f).sum())
    assert np.median(fractions) >= 0.75


# ------------------------------------------------------------ fronts


def test_front_of_zero_solution_is_empty():
    fr = front_kinematics(fake_trajectory(make(), 10, [np.zeros(64)] * 3))
    assert len(fr) == 0
    assert fr.to_csv() == "t,R,v_measured,v_predicted\n"


def test_front_speed_halves_when_a_doubles(standard_runs, a2_run):
    from pmelab.limit_oracle import matched_speed_ratio

    ratio = matched_speed_ratio(front_kinematics(a2_run), front_kinematics(standard_runs[80]), 0.4, 0.2)
    assert ratio.size >= 10
    assert np.all((ratio >= 0.425) & (ratio <= 0.575))


def test_front_csv_has_full_precision(standard_runs):
    fr = front_kinematics(standard_runs[80])
    rows = fr.to_csv().splitlines()
    assert rows[0] == "t,R,v_measured,v_predicted"
    assert float(rows[5].split(",")[1]) == fr.R[4]


def test_predicted_speed_tracks_measured(standard_runs):
    fr = front_kinematics(standard_runs[80])
    late = fr.t >= 0.2
    rel = np.abs(fr.v_predicted[late] / fr.v_measured[late] - 1)
    assert np.median(rel) < 0.2


# ------------------------------------------------------------ report


def test_zero_trajectory_has_zero_norms():
    rep = estimate_norms(fake_trajectory(make(), 10, [np.zeros(64)] * 3))
    assert all(v == 0 for v in rep.norms.values())
    assert rep.to_csv().startswith("name,value\nsup_p,0\n")


def test_report_refuses_nan():
    rep = estimate_norms(fake_trajectory(make(), 10, [np.zeros(64)] * 3))
    rep.norms["lap_p_L1"] = math.nan
    with pytest.raises(NonFiniteReportError):
        rep.to_csv()


def test_report_flags_ab_threshold():
    rep = estimate_norms(fake_trajectory(make(), 2, [np.zeros(64)] * 3))
    assert not rep.ab_guaranteed
    assert rep.ab_threshold == pytest.approx(19 / 3)


def test_standard_report_is_finite_and_holder(standard_runs):
    for m, tr in standard_runs.items():
        rep = estimate_norms(tr)
        assert isinstance(rep, DiagnosticsReport)
        assert all(math.isfinite(v) and v >= 0 for v in rep.norms.values())
        assert holder_consistent(rep, tr.grid, tr.spec.T)
        assert set(rep.front_sensitivity) == {"front_shift_level_x10", "front_shift_level_div10"}


def test_gradient_norms_bounded_across_m(standard_runs):
    vals = np.array([estimate_norms(tr)["grad_p_L4"] for tr in standard_runs.values()])
    assert np.max(np.abs(vals / np.median(vals) - 1)) <= 0.5
