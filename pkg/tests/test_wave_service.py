import numpy as np
import pytest
from pydantic import ValidationError

from dampwave.core.errors import CflViolationError, NumericalBlowupError
from dampwave.models.wave import (Field, Grid, Nonlinearity, NonlinearityType, Scheme, SolverConfig,
                                  TerminationStatus, WaveState)
from dampwave.services.wave_service import bump, crop, perturbation_factor, wave_service


def test_grid_needs_odd_node_count():
    with pytest.raises(ValidationError):
        Grid(L=1.0, nx=10)
    grid = Grid(L=1.0, nx=11)
    assert grid.dx == pytest.approx(0.2)
    assert grid.x[5] == 0.0
    assert grid.refined(2).dx == pytest.approx(0.05)


def test_nonlinearity_needs_matching_exponents():
    with pytest.raises(ValidationError):
        Nonlinearity(kind=NonlinearityType.ABS_P)
    with pytest.raises(ValidationError):
        Nonlinearity(kind=NonlinearityType.NONE, p=2.0)
    signed = Nonlinearity.signed_p(3.0)
    np.testing.assert_allclose(signed.evaluate(np.array([-2.0, 0.0, 2.0]), np.zeros(3)), [-8.0, 0.0, 8.0])


def test_bump_is_compactly_supported(grid):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 0.5, grid)
    outside = np.abs(grid.x) > 1.0 + 1e-9
    assert not u0.samples[outside].any()
    assert u0.samples[grid.nx // 2] == pytest.approx(0.5)
    np.testing.assert_array_equal(u0.samples, u1.samples)


def test_double_bump_has_zero_mean(grid):
    u0, _ = wave_service.make_initial_data("double_bump", 1.0, 1.0, grid)
    assert abs(u0.samples.sum() * grid.dx) < 1e-12
    assert not u0.samples[np.abs(grid.x) > 1.0 + 1e-9].any()


def test_initial_data_rejects_wide_support():
    with pytest.raises(ValueError):
        wave_service.make_initial_data("bump", 2.0, 1.0, Grid(L=2.0, nx=41))


def test_custom_profile_must_vanish_outside_support(grid):
    with pytest.raises(ValueError):
        wave_service.make_initial_data("custom", 1.0, 1.0, grid, custom_u0=np.ones(grid.nx))
    u0, u1 = wave_service.make_initial_data("custom", 1.0, 2.0, grid, custom_u1=bump(grid.x, 0.0, 0.5))
    assert not u0.samples.any()
    assert u1.samples.max() == pytest.approx(2.0)


def test_perturbation_keeps_support_and_is_seeded(grid):
    a, _ = wave_service.make_initial_data("bump", 1.0, 1.0, grid, perturbation=0.5, seed=3)
    b, _ = wave_service.make_initial_data("bump", 1.0, 1.0, grid, perturbation=0.5, seed=3)
    plain, _ = wave_service.make_initial_data("bump", 1.0, 1.0, grid)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, plain.samples)
    assert not a.samples[np.abs(grid.x) > 1.0 + 1e-9].any()
    with pytest.raises(ValueError):
        perturbation_factor(grid.x, 1.0, 1.0, 0)


def test_crop_keeps_centre(grid, bump_data):
    u0, _ = bump_data
    cropped = crop(u0, 1.1)
    assert cropped.grid.dx == pytest.approx(grid.dx)
    assert cropped.samples.max() == pytest.approx(u0.samples.max())
    assert cropped.grid.nx < grid.nx


def test_cfl_above_one_is_rejected(bump_data):
    u0, u1 = bump_data
    config = SolverConfig(mu0=1.0, t_end=1.0, cfl=1.5)
    with pytest.raises(CflViolationError):
        wave_service.run(u0, u1, config).collect()


def test_containment_is_checked(bump_data):
    u0, u1 = bump_data
    with pytest.raises(ValueError, match="containment"):
        wave_service.run(u0, u1, SolverConfig(mu0=1.0, t_end=10.0))


def test_zero_data_stays_zero(grid, linear_config):
    zero, _ = wave_service.make_initial_data("bump", 1.0, 0.0, grid)
    trajectory = wave_service.run(zero, zero, linear_config(t_end=2.0)).collect()
    assert trajectory.report.status == TerminationStatus.COMPLETED
    assert not trajectory.final.u.samples.any()


def test_free_wave_splits_into_two_pulses(fine_grid):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, fine_grid, u1_weight=0.0)
    state = wave_service.run(u0, u1, SolverConfig(mu0=0.0, t_end=2.0)).final
    centre = abs(state.u.samples[fine_grid.nx // 2])
    assert state.t == pytest.approx(2.0, abs=fine_grid.dx)
    assert centre <= 1e-3 * u0.samples.max()
    # each half carries half the height
    assert state.u.samples.max() == pytest.approx(0.5, abs=1e-2)


@pytest.mark.parametrize("domain, t_end", [
    (Grid(L=4.0, nx=513), 2.0),
    (Grid.with_spacing(12.0, 0.05), 10.0),
])
def test_support_grows_at_unit_speed(domain, t_end, linear_config):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, domain)
    times = [t for t in (0.0, 1.0, 2.0, 5.0, 10.0) if t <= t_end]
    trajectory = wave_service.run(u0, u1, linear_config(t_end=t_end), sample_times=times).collect()
    assert len(trajectory.states) == len(times)
    for state in trajectory.states:
        assert wave_service.support_radius(state, 1e-8) <= 1.0 + state.t + 2.0 * domain.dx


def test_data_outside_R0_is_rejected(bump_data):
    u0, u1 = bump_data
    with pytest.raises(ValueError, match="vanish"):
        wave_service.run(u0, u1, SolverConfig(mu0=1.0, t_end=1.0, R0=0.5))


def test_solution_is_linear_in_the_data(grid, linear_config):
    config = linear_config(t_end=2.0)
    a, b = 0.7, -1.3
    f0, f1 = wave_service.make_initial_data("bump", 1.0, 1.0, grid)
    g0, g1 = wave_service.make_initial_data("bump", 1.0, 1.0, grid, perturbation=0.5, seed=4, u1_weight=-0.5)
    combined = wave_service.run(Field(grid=grid, samples=a * f0.samples + b * g0.samples),
                                Field(grid=grid, samples=a * f1.samples + b * g1.samples), config).final
    first = wave_service.run(f0, f1, config).final
    second = wave_service.run(g0, g1, config).final
    np.testing.assert_allclose(combined.u.samples, a * first.u.samples + b * second.u.samples, rtol=0, atol=1e-10)
    np.testing.assert_allclose(combined.v.samples, a * first.v.samples + b * second.v.samples, rtol=0, atol=1e-10)


def test_sample_times_are_snapped_to_steps(grid, bump_data, linear_config):
    u0, u1 = bump_data
    config = linear_config(t_end=1.0)
    trajectory = wave_service.run(u0, u1, config, sample_times=[0.0, 0.5, 0.5, 1.0]).collect()
    dt = config.dt(grid)
    assert len(trajectory.states) == 3
    for state in trajectory.states:
        assert state.t / dt == pytest.approx(round(state.t / dt))


def test_trajectory_replays_cached_states(bump_data, linear_config):
    u0, u1 = bump_data
    trajectory = wave_service.run(u0, u1, linear_config(t_end=1.0), sample_times=[0.0, 0.5, 1.0])
    first = [state.t for state in trajectory]
    second = [state.t for state in trajectory]
    assert first == second
    assert len(first) == 3


def test_step_matches_trajectory(grid, bump_data, linear_config):
    u0, u1 = bump_data
    config = linear_config(t_end=1.0)
    dt = config.dt(grid)
    state = WaveState.initial(u0, u1)
    for _ in range(3):
        state = wave_service.step(state, config)
    reference = wave_service.run(u0, u1, config, sample_times=[3 * dt]).final
    np.testing.assert_allclose(state.u.samples, reference.u.samples, rtol=0, atol=1e-14)
    assert state.t == pytest.approx(reference.t)


def test_step_raises_on_non_finite_values(grid):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1e200, grid)
    config = SolverConfig(mu0=0.5, t_end=1.0, nonlinearity=Nonlinearity.abs_p(2.0))
    with pytest.raises(NumericalBlowupError) as info:
        wave_service.step(WaveState.initial(u0, u1), config)
    assert info.value.t > 0


def test_large_data_blow_up_is_detected():
    grid = Grid(L=7.0, nx=281)
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 5.0, grid)
    config = SolverConfig(mu0=0.5, t_end=5.0, nonlinearity=Nonlinearity.abs_p(2.0))
    trajectory = wave_service.run(u0, u1, config, sample_times=[]).collect()
    assert trajectory.report.blew_up
    assert trajectory.report.t < 5.0
    assert trajectory.states == []


def test_staggered_energy_is_conserved_without_damping(fine_grid, every_step):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, fine_grid)
    config = SolverConfig(mu0=0.0, t_end=1.0)
    trajectory = wave_service.run(u0, u1, config, sample_times=every_step(config, fine_grid)).collect()
    energies = np.array([wave_service.staggered_energy(s) for s in trajectory.states])
    assert np.ptp(energies) <= 1e-10 * energies[0]


def test_staggered_energy_decreases_with_damping(fine_grid, every_step):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, fine_grid)
    config = SolverConfig(mu0=1.0, t_end=1.0)
    trajectory = wave_service.run(u0, u1, config, sample_times=every_step(config, fine_grid)).collect()
    energies = np.array([wave_service.staggered_energy(s) for s in trajectory.states])
    assert np.all(np.diff(energies) <= 1e-14 * energies[0])
    with pytest.raises(ValueError):
        wave_service.staggered_energy(WaveState.initial(u0, u1))


def test_leapfrog_energy_is_constant_without_damping(fine_grid, every_step):
    u0, u1 = wave_service.make_initial_data("bump", 1.0, 1.0, fine_grid)
    config = SolverConfig(mu0=0.0, t_end=2.0)
    trajectory = wave_service.run(u0, u1, config, sample_times=every_step(config, fine_grid)).collect()
    energies = np.array([wave_service.leapfrog_energy(s) for s in trajectory.states])
    assert np.ptp(energies) <= 1e-6 * energies[0]
    # O(dt^2) away from the continuous energy
    assert energies[0] == pytest.approx(0.5 * (wave_service.l2_norm(u1.samples, fine_grid) ** 2
                                               + wave_service.l2_norm(np.diff(u0.samples) / fine_grid.dx,
                                                                      fine_grid) ** 2), rel=2e-3)


def test_leapfrog_energy_is_the_mean_of_the_staggered_energies(bump_data, grid, every_step):
    config = SolverConfig(mu0=1.0, t_end=0.5)
    states = wave_service.run(*bump_data, config, sample_times=every_step(config, grid)).collect().states
    for before, state in zip(states, states[1:]):
        mean = 0.5 * (wave_service.staggered_energy(before) + wave_service.staggered_energy(state))
        assert wave_service.leapfrog_energy(state) == pytest.approx(mean, rel=1e-12)
    plain = WaveState.initial(*bump_data)
    u, v = plain.u.samples, plain.v.samples
    assert wave_service.leapfrog_energy(plain) == pytest.approx(
        0.5 * grid.dx * (np.sum(v**2) + np.sum((np.diff(u) / grid.dx) ** 2)))


def test_leapfrog_converges_to_oracle_at_second_order():
    base = Grid(L=3.0, nx=97)
    config = SolverConfig(mu0=1.0, t_end=1.0)
    study = wave_service.convergence_study("bump", 1.0, 1.0, base, config, levels=2)
    assert len(study.orders) == 2
    assert all(a > b for a, b in zip(study.errors, study.errors[1:]))
    assert study.orders[-1] >= 1.8


def test_oracle_scheme_runs(bump_data, linear_config):
    u0, u1 = bump_data
    config = linear_config(t_end=0.5, scheme=Scheme.ORACLE_RK, oracle_substeps=4)
    leapfrog = wave_service.run(u0, u1, linear_config(t_end=0.5)).final
    oracle = wave_service.run(u0, u1, config).final
    assert wave_service.l2_norm(oracle.u.samples - leapfrog.u.samples, u0.grid) < 1e-2


def test_snapshot_frame_columns(bump_data):
    u0, u1 = bump_data
    frame = wave_service.snapshot_frame(WaveState.initial(u0, u1))
    assert list(frame.columns) == ["x", "u", "v"]
    assert len(frame) == u0.grid.nx
