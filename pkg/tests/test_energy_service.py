import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from dampwave.core.errors import InsufficientDataError, NonlinearTrajectoryError, ThresholdError
from dampwave.models.potential import PotentialParams
from dampwave.models.wave import Field, Grid, Nonlinearity, SolverConfig, WaveState
from dampwave.services.energy_service import (decay_exponent, decay_thresholds, default_A, default_mu,
                                              energy_service)
from dampwave.services.potential_service import damping
from dampwave.services.wave_service import bump, wave_service


def test_default_constants():
    assert default_A(1.0, 1.0) == pytest.approx(1.25)
    assert default_A(0.25, 1.0) == pytest.approx(4.0)
    assert default_mu(0.5) == pytest.approx(0.495)
    assert default_mu(2.0) == pytest.approx(0.99)
    assert decay_exponent(2.0) == 1.0
    assert decay_exponent(0.5, 0.3) == 0.3


def test_decay_thresholds():
    t0, t1 = decay_thresholds(1.0, 1.0, 0.5)
    assert t0 == pytest.approx(1.0) and t1 is None
    t0, t1 = decay_thresholds(2.0, 1.0, 0.99)
    assert t0 is None and t1 == pytest.approx(1.0)


def test_velocity_only_state(grid):
    g = bump(grid.x, 0.0, 1.0)
    state = WaveState.initial(Field.zeros(grid), Field(grid=grid, samples=g))
    report = energy_service.compute_report(state, PotentialParams(mu0=1.0), A=1.25)
    assert report.E0 == pytest.approx(0.5 * trapezoid(g**2, dx=grid.dx))
    assert report.E0 == pytest.approx(0.5 * report.norm_ut_L2**2)
    assert report.I_func == 0.0
    assert report.E3 == 0.0
    assert report.weighted_combo == pytest.approx(report.norm_ut_L2**2)


def test_mu_must_stay_below_mu0(bump_data):
    state = WaveState.initial(*bump_data)
    with pytest.raises(ValueError):
        energy_service.compute_report(state, PotentialParams(mu0=0.5), A=1.25, mu=0.6)
    with pytest.raises(ValueError):
        energy_service.compute_report(state, PotentialParams(mu0=0.5), A=0.0)
    report = energy_service.compute_report(state, PotentialParams(mu0=2.0), A=1.25, mu=1.5)
    assert report.mu == 1.5


def test_functionals_are_consistent(bump_data):
    state = WaveState.initial(*bump_data, t=3.0)
    report = energy_service.compute_report(state, PotentialParams(mu0=0.5), A=2.0, mu=0.4)
    s = 4.0
    assert report.F_A == pytest.approx(2.0 * report.E0 + report.I_func / (2 * s))
    assert report.E4 == pytest.approx(report.E0 + report.E3 / (2 * s))
    assert report.E2 == pytest.approx(report.E0 + 0.4 * report.E1 / (2 * s))
    assert report.I_func - report.E1 == pytest.approx(0.4 * report.norm_u_L2**2 / (2 * s))


def test_report_matches_fine_quadrature_of_the_profile():
    grid = Grid(L=1.5, nx=16385)
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, grid)
    params = PotentialParams(mu0=1.0)
    report = energy_service.compute_report(WaveState.initial(u0, u1), params, A=1.25, mu=0.5)

    x = np.linspace(-1.0, 1.0, 100 * (grid.nx - 1) + 1)
    b = np.cos(0.5 * np.pi * x) ** 4
    db = -2.0 * np.pi * np.cos(0.5 * np.pi * x) ** 3 * np.sin(0.5 * np.pi * x)
    V = damping(x, 1.0)
    u2, ux2, Vu2 = (trapezoid(f, x) for f in (b**2, db**2, V * b**2))
    E0 = 0.5 * (ux2 + u2)
    I_func = u2 + 0.5 * u2 + 0.5 * Vu2
    assert report.E0 == pytest.approx(E0, rel=1e-6)
    assert report.I_func == pytest.approx(I_func, rel=1e-6)
    assert report.F_A == pytest.approx(1.25 * E0 + 0.5 * I_func, rel=1e-6)
    assert report.E3 == pytest.approx(u2 + 0.5 * Vu2, rel=1e-6)
    assert report.norm_u_L2 == pytest.approx(math.sqrt(u2), rel=1e-6)
    assert report.norm_ux_L2 == pytest.approx(math.sqrt(ux2), rel=1e-6)
    assert report.weighted_combo == pytest.approx(u2 + Vu2 + u2 + ux2, rel=1e-6)


def test_derivative_energy_of_rest_state_vanishes(grid):
    state = WaveState.initial(Field.zeros(grid), Field.zeros(grid))
    assert energy_service.derivative_energy(state, 1.0) == 0.0


def test_dissipation_residual_small_and_second_order():
    base = Grid(L=3.5, nx=225)  # dx = 2^-5
    config = SolverConfig(mu0=1.0, t_end=2.0)
    study = energy_service.dissipation_study("bump", 1.0, 1.0, base, config, levels=2)
    assert study.dxs[-1] == pytest.approx(2.0**-7)
    assert study.residuals[-1] <= 1e-3
    assert study.orders[-1] >= 1.8


@pytest.mark.parametrize("mu0", [0.25, 0.5, 1.0, 2.0])
def test_E0_never_increases(bump_data, grid, every_step, mu0):
    config = SolverConfig(mu0=mu0, t_end=4.0)
    trajectory = wave_service.run(*bump_data, config, sample_times=every_step(config, grid)).collect()
    E0 = energy_service.report_frame(energy_service.reports(trajectory.states, PotentialParams(mu0=mu0),
                                                            default_A(mu0, 1.0)))["E0"].to_numpy()
    assert np.all(np.diff(E0) <= 1e-10 * E0[0])
    assert E0[-1] < E0[0]


def test_dissipation_of_zero_trajectory_is_zero(grid, every_step):
    config = SolverConfig(mu0=1.0, t_end=1.0)
    zero = Field.zeros(grid)
    trajectory = wave_service.run(zero, zero, config, sample_times=every_step(config, grid))
    assert energy_service.verify_dissipation(trajectory) == 0.0


def test_dissipation_needs_every_step(bump_data):
    config = SolverConfig(mu0=1.0, t_end=2.0)
    trajectory = wave_service.run(*bump_data, config, sample_times=np.linspace(0.0, 2.0, 9))
    with pytest.raises(ValueError):
        energy_service.dissipation_residuals(trajectory)


def test_dissipation_rejects_mismatched_params(bump_data, every_step, grid):
    config = SolverConfig(mu0=1.0, t_end=0.5)
    trajectory = wave_service.run(*bump_data, config, sample_times=every_step(config, grid))
    with pytest.raises(ValueError):
        energy_service.verify_dissipation(trajectory, PotentialParams(mu0=2.0))


def test_energy_identities_refuse_nonlinear_runs(bump_data):
    config = SolverConfig(mu0=1.0, t_end=1.0, nonlinearity=Nonlinearity.abs_p(2.0))
    trajectory = wave_service.run(*bump_data, config)
    with pytest.raises(NonlinearTrajectoryError):
        energy_service.verify_monotone_F_A(trajectory, PotentialParams(mu0=1.0), 1.0)


@pytest.mark.parametrize("mu0", [0.5, 1.0, 2.0])
def test_F_A_is_monotone(bump_data, mu0):
    config = SolverConfig(mu0=mu0, t_end=4.0)
    trajectory = wave_service.run(*bump_data, config, sample_times=np.arange(0.0, 4.01, 0.25))
    check = energy_service.verify_monotone_F_A(trajectory, PotentialParams(mu0=mu0), 1.0)
    assert check.monotone
    assert check.first_violation is None
    assert check.A == pytest.approx(default_A(mu0, 1.0))
    assert len(check.values) == len(check.times)


def test_equivalence_bounds_past_t1():
    grid = Grid(L=5.0, nx=201)
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, grid)
    state = wave_service.run(u0, u1, SolverConfig(mu0=2.0, t_end=2.0)).final
    params = PotentialParams(mu0=2.0)
    report = energy_service.compute_report(state, params, default_A(2.0, 1.0))
    bounds = energy_service.equivalence_bounds(report, params, 1.0)
    assert [b.functional for b in bounds] == ["F_A", "E4"]
    assert all(b.holds for b in bounds)
    assert energy_service.verify_equivalence_bounds(report, params, 1.0)


def test_below_threshold_only_F_A_is_bounded(bump_data):
    params = PotentialParams(mu0=2.0)
    report = energy_service.compute_report(WaveState.initial(*bump_data, t=0.5), params, 1.25)
    bounds = energy_service.equivalence_bounds(report, params, 1.0)
    assert [b.functional for b in bounds] == ["F_A"]
    assert bounds[0].holds
    with pytest.raises(ThresholdError):
        energy_service.decay_functional_bound(report, params, 1.0)


@pytest.mark.parametrize("mu0", [0.5, 2.0])
def test_F_A_bounds_hold_from_the_start(bump_data, mu0):
    params = PotentialParams(mu0=mu0)
    A = default_A(mu0, 1.0)
    trajectory = wave_service.run(*bump_data, SolverConfig(mu0=mu0, t_end=4.0), sample_times=np.arange(0.0, 4.01, 0.25))
    for state in trajectory:
        bound = energy_service.F_A_bound(energy_service.compute_report(state, params, A))
        assert bound.holds, (state.t, bound.ratio)


def test_E2_equivalence_past_t0():
    mu0, mu = 0.5, 0.4
    t0, _ = decay_thresholds(mu0, 1.0, mu)
    assert t0 == pytest.approx(4.0)
    grid = Grid.with_spacing(9.5, 0.05)
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, grid)
    state = wave_service.run(u0, u1, SolverConfig(mu0=mu0, t_end=2.0 * t0)).final
    params = PotentialParams(mu0=mu0)
    report = energy_service.compute_report(state, params, default_A(mu0, 1.0), mu)
    bounds = energy_service.equivalence_bounds(report, params, 1.0, mu)
    assert [b.functional for b in bounds] == ["F_A", "E2"]
    assert bounds[1].lower == pytest.approx(0.03)
    assert bounds[1].upper == pytest.approx(0.6)
    assert all(b.holds for b in bounds)


def test_fit_decay_recovers_power_law():
    times = np.arange(0.0, 401.0, 2.0)
    series = list(zip(times, 3.0 * (1.0 + times) ** -0.7))
    fit = energy_service.fit_decay(series, (20.0, 400.0))
    assert fit.slope == pytest.approx(0.7)
    assert fit.intercept == pytest.approx(math.log(3.0))
    assert fit.r_squared == pytest.approx(1.0)
    assert fit.points == 191


def test_fit_decay_needs_enough_positive_points():
    with pytest.raises(InsufficientDataError):
        energy_service.fit_decay([(t, 1.0) for t in range(20, 25)], (20.0, 400.0))
    with pytest.raises(ValueError):
        energy_service.fit_decay([(t, 0.0) for t in range(20, 60)], (20.0, 400.0))
    with pytest.raises(ValueError):
        energy_service.fit_decay([(t, 1.0) for t in range(20, 60)], (40.0, 20.0))


def test_report_frame_has_one_row_per_state(bump_data):
    config = SolverConfig(mu0=1.0, t_end=1.0)
    states = wave_service.run(*bump_data, config, sample_times=[0.0, 0.5, 1.0]).collect().states
    frame = energy_service.report_frame(energy_service.reports(states, PotentialParams(mu0=1.0), 1.25))
    assert len(frame) == 3
    assert {"t", "E0", "F_A", "weighted_combo"} <= set(frame.columns)


@pytest.mark.slow
@pytest.mark.parametrize("mu0, floor", [(0.25, 0.15), (0.5, 0.4), (1.0, 0.9), (2.0, 0.9)])
def test_weighted_combo_decays_at_least_at_the_floor(mu0, floor):
    grid = Grid.with_spacing(402.0, 0.05)
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, grid)
    trajectory = wave_service.run(u0, u1, SolverConfig(mu0=mu0, t_end=400.0),
                                  sample_times=np.arange(0.0, 400.5, 1.0)).collect()
    reports = energy_service.reports(trajectory.states, PotentialParams(mu0=mu0), default_A(mu0, 1.0))
    fit = energy_service.fit_decay([(r.t, r.weighted_combo) for r in reports], (20.0, 400.0))
    assert fit.slope >= floor
