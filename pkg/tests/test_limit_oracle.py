import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmelab.limit_oracle import (
    CauchyTable,
    ShootingError,
    UnsupportedProblemError,
    barenblatt,
    cauchy_table,
    closed_form_slope,
    front_closed_form,
    front_ode,
    front_position_error,
    front_speed_error,
    m_sweep,
    oracle_parameters,
    saturated_profile,
)
from pmelab.diagnostics import front_kinematics
from pmelab.model import standard_case
from pmelab.pme_solver import simulate


# ------------------------------------------------------------ saturated profile


def test_center_pressure_at_half_width():
    prof = saturated_profile(0.5, 1.0, 1.0)
    assert abs(prof.p_center - (1 - 1 / math.cosh(0.5))) <= 1e-8
    # 1 - 1/cosh(0.5) = 0.11318116...; the figure 0.113187 quoted in places is a digit slip
    assert prof.p_center == pytest.approx(0.1131812, abs=1e-7)


@pytest.mark.parametrize("R", [0.25, 0.5, 1.0])
def test_shooting_matches_closed_form(R):
    prof = saturated_profile(R, 1.0, 1.0)
    assert prof.max_closed_form_error <= 1e-8
    assert abs(prof.p[-1]) <= 1e-10
    assert np.all(prof.p >= -1e-10)


def test_small_interval_gives_small_center_pressure():
    centers = [saturated_profile(R, 1.0, 1.0).p_center for R in (0.1, 0.01, 0.001)]
    assert centers[-1] < 1e-6
    assert centers[0] > centers[1] > centers[2] > 0


def test_nonpositive_half_width_rejected():
    with pytest.raises(ValueError):
        saturated_profile(0.0, 1.0, 1.0)


def test_non_bracketing_interval_is_an_error():
    # with a growth law that never vanishes, no center pressure in [0, p_M] reaches 0 at R
    with pytest.raises(ShootingError):
        saturated_profile(5.0, 1.0, 1.0, phi=lambda p: 10.0)


def test_general_phi_agrees_with_linear_law():
    lin = saturated_profile(0.7, 2.0, 1.5)
    gen = saturated_profile(0.7, 2.0, 1.5, phi=lambda p: 2.0 * (1.5 - p))
    assert abs(lin.p_center - gen.p_center) < 1e-9
    assert abs(lin.edge_slope - gen.edge_slope) < 1e-8


def test_profile_csv_header():
    text = saturated_profile(0.5, 1.0, 1.0).to_csv()
    assert text.startswith("x,p,p_closed\n")


# ------------------------------------------------------------ front ODE


def test_initial_front_speed():
    sol = front_ode(0.5, 1.0)
    assert sol.dRdt[0] == pytest.approx(math.tanh(0.5), abs=1e-12)
    assert sol.dRdt[0] == pytest.approx(0.462117, abs=1e-6)
    shoot = abs(saturated_profile(0.5, 1.0, 1.0).edge_slope)
    assert shoot == pytest.approx(math.tanh(0.5), abs=1e-8)


def test_doubling_a_halves_speed():
    for R in (0.1, 0.5, 2.0):
        assert closed_form_slope(R, 1.0, 1.0, 2.0) == pytest.approx(0.5 * closed_form_slope(R, 1.0, 1.0, 1.0))


def test_speed_vanishes_as_growth_rate_vanishes():
    speeds = [closed_form_slope(0.5, lam, 1.0) for lam in (1e-2, 1e-4, 1e-6)]
    assert speeds[-1] < 1e-5
    assert speeds[0] > speeds[1] > speeds[2]


def test_rk4_matches_closed_form():
    sol = front_ode(0.5, 1.0, lam=1.3, p_M=0.8, a=1.7)
    exact = front_closed_form(sol.t, 0.5, 1.3, 0.8, 1.7)
    assert np.max(np.abs(sol.R - exact)) < 1e-12


def test_zero_horizon_single_row():
    sol = front_ode(0.5, 0.0)
    assert len(sol.t) == 1 and sol.R[0] == 0.5
    assert sol.to_csv().count("\n") == 2


@given(R0=st.floats(0.01, 3.0), lam=st.floats(0.1, 4.0), a=st.floats(0.5, 2.0))
@settings(max_examples=25, deadline=None)
def test_front_strictly_increasing(R0, lam, a):
    sol = front_ode(R0, 1.0, lam=lam, a=a, steps=256)
    assert np.all(np.diff(sol.R) > 0)


def test_shooting_slope_front_matches_closed_form():
    lin = front_ode(0.5, 0.5, steps=16)
    gen = front_ode(0.5, 0.5, steps=16, phi=lambda p: 1.0 - p, shoot_steps=512)
    assert np.max(np.abs(lin.R - gen.R)) < 1e-6


def test_front_rejects_nonpositive_start():
    with pytest.raises(ValueError):
        front_ode(0.0, 1.0)


# ------------------------------------------------------------ problem support


def test_oracle_parameters_for_standard_case():
    assert oracle_parameters(standard_case()) == (1.0, 1.0, 1.0, 1.0)


@pytest.mark.parametrize(
    "override",
    [dict(a="1 + 0.5*x^2"), dict(phi="1 - p^2"), dict(phi="2*(1 - p)"), dict(phi="(1 - p)*(1 + 0.1*x)")],
)
def test_oracle_rejects_unsupported_problems(override):
    with pytest.raises(UnsupportedProblemError):
        oracle_parameters(standard_case(**override))


# ------------------------------------------------------------ Cauchy table


def test_identical_runs_have_zero_difference():
    tr = simulate(standard_case(n=64, T=0.1, snapshots=4), 10)
    table = cauchy_table([tr, tr])
    assert table.rows[0].du_L1 == 0 and table.rows[0].dp_L1 == 0


def test_grid_mismatch_is_rejected():
    a = simulate(standard_case(n=64, T=0.1, snapshots=4), 10)
    b = simulate(standard_case(n=128, T=0.1, snapshots=4), 20)
    with pytest.raises(ValueError, match="grid"):
        cauchy_table([a, b])


def test_time_mismatch_is_rejected():
    a = simulate(standard_case(n=64, T=0.1, snapshots=4), 10)
    b = simulate(standard_case(n=64, T=0.1, snapshots=5), 20)
    with pytest.raises(ValueError, match="times"):
        cauchy_table([a, b])


def test_m_sweep_runs_when_needed():
    table = m_sweep(standard_case(n=64, T=0.1, snapshots=4), (10, 20, 40))
    assert isinstance(table, CauchyTable)
    assert len(table.rows) == 2 and np.all(table.du >= 0)
    assert table.to_csv().startswith("m_low,m_high,du_L1,dp_L1\n10,20,")


def test_standard_sweep_is_cauchy(standard_runs):
    table = cauchy_table([standard_runs[m] for m in (10, 20, 40, 80)])
    assert table.strictly_decreasing() == (True, True)
    assert table.ratio_u <= 0.8 and table.ratio_p <= 0.8


def test_saturation_ceiling_at_m80(standard_runs):
    assert np.max(standard_runs[80].snapshots[-1]) <= 1.02


# ------------------------------------------------------------ front comparisons


def test_pme_front_follows_oracle(standard_runs):
    fr = front_kinematics(standard_runs[80])
    oracle = front_ode(fr.R[0], 1.0)
    assert front_position_error(fr, oracle, 0.2) <= 0.1
    assert front_speed_error(fr, 1.0, 1.0, 1.0, 0.2) <= 0.1


# ------------------------------------------------------------ Barenblatt closed form


def test_barenblatt_exponents():
    # m = 2, d = 1: alpha = 1/3, k = 1/12
    x = np.array([0.0, 0.5])
    assert barenblatt(x, 1.0, 2.0, C=1.0)[0] == 1.0
    assert barenblatt(x, 1.0, 2.0, C=1.0)[1] == pytest.approx(1 - 0.25 / 12)
    assert barenblatt(np.array([0.0]), 8.0, 2.0)[0] == pytest.approx(0.5)


def test_barenblatt_solves_the_equation():
    # finite-difference check of u_t = (u^2)_xx inside the support
    x = np.linspace(-0.5, 0.5, 11)
    t, dt, dx = 1.0, 1e-5, 1e-4
    ut = (barenblatt(x, t + dt, 2) - barenblatt(x, t - dt, 2)) / (2 * dt)
    f = lambda y: barenblatt(y, t, 2) ** 2  # noqa: E731
    uxx = (f(x + dx) - 2 * f(x) + f(x - dx)) / dx**2
    np.testing.assert_allclose(ut, uxx, atol=1e-5)
