import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from functools import partial
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from dampwave.core.config import settings
from dampwave.core.errors import ConfigError, ConfigParseError
from dampwave.models.blowup import CriticalRow, LifespanConfig, LifespanRecord
from dampwave.models.duhamel import QuadratureRule
from dampwave.models.experiment import ExperimentConfig, ExperimentKind, Job, JobOutcome, Manifest
from dampwave.models.potential import PotentialParams
from dampwave.models.wave import Grid, Nonlinearity, NonlinearityType, SolverConfig
from dampwave.services.blowup_service import blowup_service, critical_exponent, geometric_ladder
from dampwave.services.duhamel_service import duhamel_service
from dampwave.services.energy_service import decay_thresholds, default_A, default_mu, energy_service
from dampwave.services.potential_service import MIN_GROWTH_RADIUS, potential_service
from dampwave.services.wave_service import wave_service
from dampwave.storage.artifacts import ArtifactStore

logger = logging.getLogger(__name__)

LIFESPAN_KINDS = (ExperimentKind.LIFESPAN_SWEEP, ExperimentKind.CRITICAL_PROBE)
POSITIVE_MU0_KINDS = (ExperimentKind.LINEAR_DECAY, ExperimentKind.PHI_CHECKS, ExperimentKind.PICARD) + LIFESPAN_KINDS
SUPPORT_TOL = 1e-8
FIT_TOLERANCE = 0.15
GLOBAL_REFERENCE_TIME = 20.0  # weighted_combo past this time stays within twice its value here
SHIFTED_THRESHOLD = 1e16
THRESHOLD_SHIFT_TOL = 0.01


def _format_error(error: Mapping[str, Any]) -> str:
    location = ".".join(str(part) for part in error.get("loc", ()))
    return f"{location}: {error['msg']}" if location else error["msg"]


def _raise_config_error(e: ValidationError):
    messages = [_format_error(error) for error in e.errors()]
    if any(error["type"] == "json_invalid" for error in e.errors()):
        raise ConfigParseError(messages) from e
    raise ConfigError(messages) from e


def lifespan_form(config: ExperimentConfig) -> NonlinearityType:
    if config.nonlinearity == NonlinearityType.NONE:
        return NonlinearityType.ABS_P
    return config.nonlinearity


def lifespan_p(config: ExperimentConfig) -> Optional[float]:
    if config.experiment == ExperimentKind.CRITICAL_PROBE and config.p is None and config.mu0 > 0:
        return critical_exponent(config.mu0)
    return config.p


def build_nonlinearity(config: ExperimentConfig) -> Nonlinearity:
    """Nonlinearity carrying only the exponents its kind takes"""
    kind = config.nonlinearity
    needs_p = kind in (NonlinearityType.ABS_P, NonlinearityType.SIGNED_P, NonlinearityType.MIXED)
    needs_q = kind in (NonlinearityType.SPACE_Q, NonlinearityType.MIXED)
    return Nonlinearity(kind=kind, p=config.p if needs_p else None, q=config.q if needs_q else None)


def validate_constraints(config: ExperimentConfig) -> List[str]:
    """Every cross-field violation of ``config``, not just the first"""
    errors: List[str] = []
    kind = config.experiment
    if config.cfl > 1:
        errors.append(f"cfl: {config.cfl} exceeds 1 (stability)")
    if config.nx is not None and config.L is None:
        errors.append("nx: needs L as well")
    if config.nx is not None and config.nx % 2 == 0:
        errors.append(f"nx: {config.nx} must be odd so that x=0 is a grid node")
    if kind in POSITIVE_MU0_KINDS and config.mu0 <= 0:
        errors.append(f"mu0: {kind.value} needs mu0 > 0")

    grid = None
    if not any(e.startswith("nx:") for e in errors):
        try:
            grid = config.grid()
        except (ValidationError, ValueError) as e:
            errors.append(f"grid: {e}")
    if grid is not None:
        if config.R0 >= grid.L:
            errors.append(f"R0: {config.R0} must be smaller than L={grid.L:g}")
        needed = config.R0 + config.horizon + 4.0 * grid.dx
        if kind != ExperimentKind.PHI_CHECKS and grid.L < needed:
            errors.append(f"containment: L={grid.L:g} must be >= R0 + t_end + 4dx = {needed:g}")

    if kind in (ExperimentKind.SIMULATE, ExperimentKind.PICARD):
        try:
            build_nonlinearity(config)
        except ValidationError as e:
            errors.extend(f"nonlinearity: {error['msg']}" for error in e.errors())
    if kind in LIFESPAN_KINDS and config.nonlinearity not in (
            NonlinearityType.NONE, NonlinearityType.ABS_P, NonlinearityType.SIGNED_P):
        errors.append(f"nonlinearity: {kind.value} takes abs_p or signed_p, got {config.nonlinearity.value}")
    if kind == ExperimentKind.LIFESPAN_SWEEP:
        if config.p is None:
            errors.append("p: lifespan_sweep needs an exponent p > 1")
        elif not config.mu0 * (config.p - 1.0) < 2.0:
            errors.append(f"p: mu0 (p-1) = {config.mu0 * (config.p - 1.0):g} must be below 2 (subcritical branch)")
        if config.eps_ladder < 5:
            errors.append(f"eps_ladder: {config.eps_ladder} entries, at least 5 needed")
    if kind == ExperimentKind.CRITICAL_PROBE and config.p is not None and config.mu0 > 0:
        if not math.isclose(config.p, critical_exponent(config.mu0), rel_tol=1e-12):
            errors.append(f"p: critical_probe needs p = 1 + 2/mu0 = {critical_exponent(config.mu0):g}, got {config.p}")
    if kind == ExperimentKind.LINEAR_DECAY:
        if not config.window_lo < config.window_hi:
            errors.append(f"window: window_lo={config.window_lo} must be below window_hi={config.window_hi}")
        if config.window_hi > config.resolved_t_end:
            errors.append(f"window: window_hi={config.window_hi} exceeds t_end={config.resolved_t_end}")
    if config.mu is not None and 0 < config.mu0 <= 1 and not config.mu < config.mu0:
        errors.append(f"mu: {config.mu} must lie below mu0={config.mu0}")
    return errors


def _coarse_grid(config: ExperimentConfig, levels: int) -> Grid:
    """Grid of spacing dx 2^levels that contains every run; refined(levels) has spacing dx"""
    coarse_dx = config.dx * 2**levels
    half = int(math.ceil((config.R0 + config.horizon) / coarse_dx)) + 5
    return Grid(L=half * coarse_dx, nx=2 * half + 1)


def _execute_job(config: ExperimentConfig, root: str, job: Job) -> JobOutcome:
    return experiment_service.execute(config, job, ArtifactStore(root, config.label))


class ExperimentService:
    # configuration

    def load_config(self, source: Union[str, Path]) -> ExperimentConfig:
        """Validated config from a JSON file path or JSON text"""
        text = source.read_text() if isinstance(source, Path) else source
        try:
            config = ExperimentConfig.model_validate_json(text)
        except ValidationError as e:
            _raise_config_error(e)
        errors = validate_constraints(config)
        if errors:
            raise ConfigError(errors)
        return config

    def config_from_mapping(self, data: Mapping[str, Any]) -> ExperimentConfig:
        try:
            config = ExperimentConfig.model_validate(dict(data))
        except ValidationError as e:
            _raise_config_error(e)
        errors = validate_constraints(config)
        if errors:
            raise ConfigError(errors)
        return config

    def dump_config(self, config: ExperimentConfig) -> str:
        return config.model_dump_json(indent=2, exclude_none=True)

    # planning

    def plan(self, config: ExperimentConfig) -> List[Job]:
        """Explicit job list; each job can be replayed on its own"""
        kind = config.experiment
        linear = config.nonlinearity == NonlinearityType.NONE
        if kind in LIFESPAN_KINDS:
            ladder = geometric_ladder(config.eps_max, config.eps_ladder, config.eps_ratio)
            return [Job(index=i, job_id=f"{i:03d}-eps-{eps:.6g}", task="lifespan", eps=eps)
                    for i, eps in enumerate(ladder)]
        if kind == ExperimentKind.PHI_CHECKS:
            tasks = ["phi_table", "phi_small_mu0", "phi_growth", "psi_mass", "phi_order"]
        elif kind == ExperimentKind.LINEAR_DECAY:
            tasks = ["decay"]
        elif kind == ExperimentKind.DISSIPATION:
            tasks = ["dissipation_residual"]
            if config.mu0 > 0:
                tasks += ["dissipation_order", "F_A_monotone", "equivalence"]
            else:
                tasks.append("energy_conservation")
        elif kind == ExperimentKind.PICARD:
            tasks = ["picard", "propagation"]
        else:
            tasks = ["simulate"]
            if linear:
                tasks.append("convergence")
            if linear and config.mu0 == 0:
                tasks.append("dalembert")
            if not linear and config.resolved_t_end >= 2.0 * GLOBAL_REFERENCE_TIME:
                tasks.append("global_bound")
        return [Job(index=i, job_id=f"{i:03d}-{task}", task=task) for i, task in enumerate(tasks)]

    # execution

    def execute(self, config: ExperimentConfig, job: Job, store: ArtifactStore) -> JobOutcome:
        """Run one job; failures are captured in the outcome"""
        outcome = JobOutcome(job_id=job.job_id, index=job.index)
        try:
            getattr(self, f"_task_{job.task}")(config, job, store, outcome)
        except Exception as e:
            logger.error(f"Job {job.job_id} failed: {e}")
            outcome.ok = False
            outcome.error = f"{type(e).__name__}: {e}"
        return outcome

    def _initial_data(self, config: ExperimentConfig, grid: Grid, eps: Optional[float] = None, **weights):
        return wave_service.make_initial_data(
            config.profile, config.R0, config.eps if eps is None else eps, grid,
            u0_weight=weights.get("u0_weight", config.u0_weight), u1_weight=weights.get("u1_weight", config.u1_weight),
            perturbation=config.profile_perturbation, seed=config.seed)

    def _solver_config(self, config: ExperimentConfig, t_end: float, nonlinearity: Optional[Nonlinearity] = None,
                       R0: Optional[float] = None) -> SolverConfig:
        return SolverConfig(cfl=config.cfl, scheme=config.scheme, t_end=t_end,
                            blowup_threshold=config.blowup_threshold, mu0=config.mu0,
                            nonlinearity=nonlinearity or Nonlinearity.none(), R0=R0 or config.R0)

    def _record(self, outcome: JobOutcome, path: Path):
        outcome.artifacts.append(str(path))

    def _check(self, outcome: JobOutcome, name: str, passed: bool, value: Optional[float] = None):
        outcome.invariants[name] = bool(passed)
        if value is not None:
            outcome.values[name] = float(value)
        if not passed:
            logger.warning(f"{outcome.job_id}: invariant {name} failed (value={value})")

    def _support_ok(self, states, R0: float, grid: Grid) -> bool:
        """support_radius(state, 1e-8) <= R0 + t + 2dx on every state"""
        return all(wave_service.support_radius(s, SUPPORT_TOL) <= R0 + s.t + 2.0 * grid.dx for s in states)

    # potential

    def _task_phi_table(self, config, job, store, outcome):
        params = PotentialParams(mu0=config.mu0)
        table = potential_service.solve_phi(params, config.r_max, config.dr)
        self._record(outcome, store.write_csv(job.job_id, "phi_table.csv", potential_service.table_frame(table)))
        residual = float(potential_service.ode_residual(table).max())
        r = min(10.0, table.r_max)
        reference, _ = potential_service.phi_reference(params, r)
        error = abs(float(np.exp(table.log_phi_at(r))) / reference - 1.0)
        self._check(outcome, "ode_residual", residual <= 1e-6, residual)
        self._check(outcome, "reference_agreement", error <= 1e-8, error)

    def _task_phi_small_mu0(self, config, job, store, outcome):
        table = potential_service.solve_phi(PotentialParams(mu0=1e-12), min(config.r_max, 10.0), config.dr)
        error = float(np.max(np.abs(table.values / np.cosh(table.r) - 1.0)))
        store_path = store.write_json(job.job_id, "cosh_check.json", {"mu0": 1e-12, "r_max": table.r_max,
                                                                        "max_rel_error": error})
        self._record(outcome, store_path)
        self._check(outcome, "cosh_limit", error <= 1e-8, error)

    def _task_phi_growth(self, config, job, store, outcome):
        table = potential_service.solve_phi(PotentialParams(mu0=config.mu0), max(config.r_max, MIN_GROWTH_RADIUS),
                                            config.dr)
        report = potential_service.check_phi_growth(table)
        stride = max(1, int(round(0.01 / table.dr)))
        frame = pd.DataFrame({"r": report.r[::stride], "rho": report.rho[::stride]})
        self._record(outcome, store.write_csv(job.job_id, "growth.csv", frame))
        self._record(outcome, store.write_json(job.job_id, "growth.json", report.model_dump(exclude={"r", "rho"})))
        inside = report.r <= 50.0
        sup = float(report.rho[inside].max())
        self._check(outcome, "envelope_bounded", sup <= 3.0 * report.rho0, sup / report.rho0)

    def _task_psi_mass(self, config, job, store, outcome):
        table = potential_service.solve_phi(PotentialParams(mu0=config.mu0), config.R0 + config.psi_t_max, config.dr)
        times = np.arange(0.0, config.psi_t_max + 0.5, 1.0)
        series = potential_service.psi_mass_series(table, times, config.R0)
        frame = pd.DataFrame({"t": series.times, "mass": series.masses, "ratio": series.ratios})
        self._record(outcome, store.write_csv(job.job_id, "psi_mass.csv", frame))
        self._check(outcome, "psi_mass_bounded", series.max_ratio <= 2.0 * series.reference,
                    series.max_ratio / series.reference)

    def _task_phi_order(self, config, job, store, outcome):
        study = potential_service.observed_order(PotentialParams(mu0=config.mu0), r=5.0, dr=0.1, halvings=3)
        self._record(outcome, store.write_json(job.job_id, "order.json", study))
        self._check(outcome, "rk4_order", study.orders[-1] >= 3.8, study.orders[-1])

    # energetics

    def _task_decay(self, config, job, store, outcome):
        grid = config.grid()
        t_end = config.resolved_t_end
        params = PotentialParams(mu0=config.mu0)
        u0, u1 = self._initial_data(config, grid)
        times = np.arange(0.0, t_end + 0.5 * config.sample_every, config.sample_every)
        trajectory = wave_service.run(u0, u1, self._solver_config(config, t_end), sample_times=times).collect()
        A = default_A(config.mu0, config.R0)
        reports = energy_service.reports(trajectory.states, params, A, config.mu)
        frame = energy_service.report_frame(reports)
        frame["derivative_energy"] = [energy_service.derivative_energy(s, config.mu0) for s in trajectory.states]
        self._record(outcome, store.write_csv(job.job_id, "energy.csv", frame))

        window = (config.window_lo, config.window_hi)
        fit = energy_service.fit_decay(list(zip(frame["t"], frame["weighted_combo"])), window)
        derivative_fit = energy_service.fit_decay(list(zip(frame["t"], frame["derivative_energy"])), window)
        self._record(outcome, store.write_json(job.job_id, "decay_fit.json",
                                               {"weighted_combo": fit.model_dump(mode="json"),
                                                "derivative_energy": derivative_fit.model_dump(mode="json")}))
        floor = config.mu0 - 0.1 if config.mu0 <= 1 else 0.9
        E0 = frame["E0"].to_numpy()
        self._check(outcome, "decay_slope_floor", fit.slope >= floor, fit.slope)
        self._check(outcome, "derivative_slope_floor", derivative_fit.slope >= floor, derivative_fit.slope)
        self._check(outcome, "E0_nonincreasing", bool(np.all(np.diff(E0) <= 1e-8 * E0[0])))
        self._check(outcome, "F_A_monotone", energy_service.verify_monotone_F_A(trajectory, params, config.R0).monotone)
        self._check(outcome, "finite_speed", self._support_ok(trajectory.states, config.R0, grid))

    def _every_step(self, config: ExperimentConfig, grid: Grid, t_end: float):
        u0, u1 = self._initial_data(config, grid)
        solver = self._solver_config(config, t_end)
        dt = solver.dt(grid)
        steps = int(round(t_end / dt))
        return wave_service.run(u0, u1, solver, sample_times=np.arange(steps + 1) * dt).collect()

    def _task_dissipation_residual(self, config, job, store, outcome):
        trajectory = self._every_step(config, config.grid(), config.resolved_t_end)
        times, residuals = energy_service.dissipation_residuals(trajectory)
        self._record(outcome, store.write_csv(job.job_id, "residuals.csv",
                                              pd.DataFrame({"t": times, "residual": residuals})))
        worst = max(residuals, default=0.0)
        self._check(outcome, "dissipation_residual", worst <= 1e-3, worst)

    def _task_dissipation_order(self, config, job, store, outcome):
        levels = config.refinement_levels
        base = _coarse_grid(config, levels)
        study = energy_service.dissipation_study(config.profile, config.R0, config.eps, base,
                                                 self._solver_config(config, config.resolved_t_end), levels)
        self._record(outcome, store.write_json(job.job_id, "dissipation_study.json", study))
        self._check(outcome, "dissipation_order", study.orders[-1] >= 1.8, study.orders[-1])

    def _task_energy_conservation(self, config, job, store, outcome):
        trajectory = self._every_step(config, config.grid(), config.resolved_t_end)
        E0 = np.array([wave_service.leapfrog_energy(s) for s in trajectory.states])
        staggered = np.array([wave_service.staggered_energy(s) for s in trajectory.states])
        drift = float(np.ptp(E0) / E0[0]) if E0[0] > 0 else 0.0
        staggered_drift = float(np.ptp(staggered) / staggered[0]) if staggered.size and staggered[0] > 0 else 0.0
        self._record(outcome, store.write_json(job.job_id, "conservation.json",
                                               {"E0_drift": drift, "staggered_drift": staggered_drift}))
        self._check(outcome, "E0_conserved", drift <= 1e-6, drift)
        self._check(outcome, "staggered_energy_conserved", staggered_drift <= 1e-10, staggered_drift)

    def _task_F_A_monotone(self, config, job, store, outcome):
        grid = config.grid()
        t_end = config.resolved_t_end
        u0, u1 = self._initial_data(config, grid)
        spacing = min(config.sample_every, t_end / 20.0)
        times = np.arange(0.0, t_end + 0.5 * spacing, spacing)
        trajectory = wave_service.run(u0, u1, self._solver_config(config, t_end), sample_times=times)
        check = energy_service.verify_monotone_F_A(trajectory, PotentialParams(mu0=config.mu0), config.R0)
        self._record(outcome, store.write_csv(job.job_id, "F_A.csv",
                                              pd.DataFrame({"t": check.times, "F_A": check.values})))
        self._check(outcome, "F_A_monotone", check.monotone, check.first_violation)

    def _task_equivalence(self, config, job, store, outcome):
        grid = config.grid()
        params = PotentialParams(mu0=config.mu0)
        mu = config.mu if config.mu is not None else default_mu(config.mu0)
        A = default_A(config.mu0, config.R0)
        t0, t1 = decay_thresholds(config.mu0, config.R0, mu)
        t_check = config.equivalence_time
        u0, u1 = self._initial_data(config, grid)
        spacing = min(config.sample_every, t_check / 20.0)
        times = np.arange(0.0, t_check + 0.5 * spacing, spacing)
        trajectory = wave_service.run(u0, u1, self._solver_config(config, t_check), sample_times=times).collect()
        rows = []
        for state in trajectory.states:
            report = energy_service.compute_report(state, params, A, mu)
            for bound in energy_service.equivalence_bounds(report, params, config.R0, mu):
                rows.append(dict(bound.model_dump(mode="json"), t=report.t, holds=bound.holds))
        frame = pd.DataFrame(rows, columns=["t", "functional", "ratio", "lower", "upper", "holds"])
        self._record(outcome, store.write_csv(job.job_id, "equivalence.csv", frame))
        self._record(outcome, store.write_json(job.job_id, "equivalence.json", {"t_check": t_check, "t0": t0, "t1": t1}))
        for name, group in frame.groupby("functional", sort=False):
            failed = group[~group["holds"]]
            self._check(outcome, f"{name}_equivalence", failed.empty,
                        None if failed.empty else float(failed["t"].iloc[0]))

    # wave solver

    def _task_simulate(self, config, job, store, outcome):
        grid = config.grid()
        t_end = config.resolved_t_end
        nonlinearity = build_nonlinearity(config)
        u0, u1 = self._initial_data(config, grid)
        times = np.linspace(0.0, t_end, config.snapshots) if config.snapshots > 1 else [t_end]
        solver = self._solver_config(config, t_end, nonlinearity)
        trajectory = wave_service.run(u0, u1, solver, sample_times=times).collect()
        for k, state in enumerate(trajectory.states):
            self._record(outcome, store.write_csv(job.job_id, f"snapshot_{k:03d}.csv", wave_service.snapshot_frame(state)))
        payload = {
            "config": solver.model_dump(mode="json"),
            "grid": grid.model_dump(mode="json"),
            "sample_times": [s.t for s in trajectory.states],
            "termination": trajectory.report.model_dump(mode="json"),
        }
        if config.mu0 > 0:
            table = potential_service.solve_phi(PotentialParams(mu0=config.mu0), grid.L, config.dr)
            payload["psi_pairing"] = [potential_service.psi_pairing(s, table) for s in trajectory.states]
        self._record(outcome, store.write_json(job.job_id, "trajectory.json", payload))
        outcome.values["termination_t"] = trajectory.report.t
        self._check(outcome, "finite_speed", self._support_ok(trajectory.states, config.R0, grid))

    def _task_convergence(self, config, job, store, outcome):
        coarse_dx = 1.0 / 16.0
        half = int(math.ceil((config.R0 + 1.5) / coarse_dx))
        base = Grid(L=half * coarse_dx, nx=2 * half + 1)
        solver = self._solver_config(config, 1.0)
        study = wave_service.convergence_study(config.profile, config.R0, config.eps or 1.0, base, solver, levels=2,
                                               u0_weight=config.u0_weight, u1_weight=config.u1_weight)
        self._record(outcome, store.write_json(job.job_id, "convergence.json", study))
        self._check(outcome, "oracle_order", study.orders[-1] >= 1.8, study.orders[-1])

    def _task_dalembert(self, config, job, store, outcome):
        grid = config.grid()
        u0, u1 = self._initial_data(config, grid, eps=1.0, u0_weight=1.0, u1_weight=0.0)
        t = 2.0 * config.R0
        state = wave_service.run(u0, u1, self._solver_config(config, t)).final
        centre = abs(float(state.u.samples[grid.nx // 2]))
        peak = float(np.max(np.abs(u0.samples)))
        self._record(outcome, store.write_csv(job.job_id, "split.csv", wave_service.snapshot_frame(state)))
        self._check(outcome, "dalembert_split", centre <= 1e-3 * peak, centre / peak)

    def _task_global_bound(self, config, job, store, outcome):
        grid = config.grid()
        t_end = config.resolved_t_end
        u0, u1 = self._initial_data(config, grid)
        times = np.arange(0.0, t_end + 0.5 * config.sample_every, config.sample_every)
        solver = self._solver_config(config, t_end, build_nonlinearity(config))
        trajectory = wave_service.run(u0, u1, solver, sample_times=times).collect()
        frame = pd.DataFrame({"t": [s.t for s in trajectory.states],
                              "weighted_combo": [energy_service.weighted_combo(s, config.mu0)
                                                 for s in trajectory.states]})
        self._record(outcome, store.write_csv(job.job_id, "weighted_combo.csv", frame))
        self._check(outcome, "no_blowup", not trajectory.report.blew_up, trajectory.report.t)
        later = frame[frame["t"] >= GLOBAL_REFERENCE_TIME]
        if trajectory.report.blew_up or later.empty:
            self._check(outcome, "weighted_combo_bounded", False)
            return
        reference = float(later["weighted_combo"].iloc[0])
        growth = float(later["weighted_combo"].max()) / reference if reference > 0 else 0.0
        self._check(outcome, "weighted_combo_bounded", growth <= 2.0, growth)

    # duhamel

    def _task_picard(self, config, job, store, outcome):
        grid = config.grid()
        T = config.resolved_t_end
        nonlinearity = build_nonlinearity(config)
        u0, u1 = self._initial_data(config, grid)
        solver = self._solver_config(config, T)
        result = duhamel_service.picard_iterate(u0, u1, nonlinearity, config.K, T, config.quad_dt, solver,
                                                config.quadrature)
        self._record(outcome, store.write_csv(job.job_id, "distances.csv", duhamel_service.distances_frame(result)))

        direct = wave_service.run(u0, u1, solver.model_copy(update={"t_end": result.T, "nonlinearity": nonlinearity}))
        direct_u = direct.final.u.samples
        final_u = result.iterates[-1].u[-1]
        linear_u = result.iterates[0].u[-1]
        error = wave_service.l2_norm(final_u - direct_u, grid)
        deviation = wave_service.l2_norm(direct_u - linear_u, grid)
        distances = result.distance_values
        tolerance = max(10.0 * distances[-1], 2.0 * result.quad_dt * deviation)
        self._record(outcome, store.write_json(job.job_id, "picard.json", {
            "alpha": result.alpha, "T": result.T, "quad_dt": result.quad_dt, "rule": result.rule.value,
            "distances": distances, "ratios": result.ratios, "norms": [n.value for n in result.norms],
            "direct_error": error, "direct_deviation": deviation, "direct_tolerance": tolerance,
            "direct_termination": direct.report.model_dump(mode="json"),
        }))
        floor = 1e-12 * max(n.value for n in result.norms)
        contraction = all(distances[k + 1] <= 0.5 * distances[k] + floor for k in range(1, min(4, len(distances) - 1)))
        nonincreasing = all(b <= a + floor for a, b in zip(distances, distances[1:]))
        self._check(outcome, "contraction", contraction)
        self._check(outcome, "distances_nonincreasing", nonincreasing)
        self._check(outcome, "direct_agreement", error <= tolerance, error)

    def _task_propagation(self, config, job, store, outcome):
        grid = config.grid()
        u0, u1 = self._initial_data(config, grid)
        ratio = duhamel_service.propagation_ratio(u0, u1, config.s0, config.propagation_span,
                                                  self._solver_config(config, config.propagation_span))
        self._record(outcome, store.write_csv(job.job_id, "propagation.csv",
                                              pd.DataFrame({"t": ratio.times, "ratio": ratio.ratios})))
        self._check(outcome, "propagation_bounded", ratio.max_ratio <= 100.0, ratio.max_ratio)

    # blow-up

    def lifespan_config(self, config: ExperimentConfig) -> LifespanConfig:
        return LifespanConfig(grid=config.grid(), cfl=config.cfl, t_end=config.resolved_t_end,
                              blowup_threshold=config.blowup_threshold, profile=config.profile,
                              form=lifespan_form(config), max_refinements=config.max_refinements,
                              u0_weight=config.u0_weight, u1_weight=config.u1_weight,
                              perturbation=config.profile_perturbation, seed=config.seed)

    def _task_lifespan(self, config, job, store, outcome):
        record = blowup_service.estimate_lifespan(job.eps, lifespan_p(config), config.mu0, config.R0,
                                                  self.lifespan_config(config))
        self._record(outcome, store.write_json(job.job_id, "record.json", record))
        outcome.record = record.model_dump(mode="json")
        outcome.values["T_num"] = record.T_num

    def _reduce_lifespan(self, config: ExperimentConfig, outcomes: List[JobOutcome], store: ArtifactStore) -> JobOutcome:
        outcome = JobOutcome(job_id="fit", index=len(outcomes))
        records = [LifespanRecord.model_validate(o.record) for o in outcomes if o.ok and o.record is not None]
        try:
            self._record(outcome, store.write_csv("fit", "records.csv", blowup_service.records_frame(records)))
            self._check(outcome, "monotone_in_eps", blowup_service.is_monotone(records))
            p = lifespan_p(config)
            self._spot_check_threshold(config, records, p, store, outcome)
            if config.experiment == ExperimentKind.LIFESPAN_SWEEP:
                fit = blowup_service.fit_lifespan_records(records, config.mu0, p, lifespan_form(config))
                self._record(outcome, store.write_json("fit", "lifespan_fit.json", fit.model_dump(exclude={"records"})))
                if not fit.exploratory:
                    self._check(outcome, "slope_within_tolerance", fit.rel_error <= FIT_TOLERANCE, fit.slope)
            else:
                rows = [CriticalRow(eps=r.eps, log_T=math.log(r.T_num), eps_power=r.eps ** (1.0 - p))
                        for r in records if r.usable]
                probe = blowup_service.fit_critical_rows(rows, config.mu0, p, records)
                self._record(outcome, store.write_json("fit", "critical_probe.json", probe.model_dump(exclude={"records"})))
                self._check(outcome, "critical_slope_positive", probe.slope > 0, probe.slope)
                self._check(outcome, "critical_linearity", probe.r_squared >= 0.9, probe.r_squared)
        except Exception as e:
            logger.error(f"Lifespan reduction failed: {e}")
            outcome.ok = False
            outcome.error = f"{type(e).__name__}: {e}"
        return outcome

    def _spot_check_threshold(self, config: ExperimentConfig, records: List[LifespanRecord], p: float,
                              store: ArtifactStore, outcome: JobOutcome):
        """Rerun the longest uncensored lifespan with a much higher blow-up threshold"""
        usable = [r for r in records if r.usable]
        if not usable:
            return
        longest = max(usable, key=lambda r: r.T_num)
        shift = blowup_service.threshold_shift(longest.eps, p, config.mu0, config.R0, self.lifespan_config(config),
                                               SHIFTED_THRESHOLD)
        self._record(outcome, store.write_json("fit", "threshold_shift.json", shift))
        if shift.rel_shift is not None:
            self._check(outcome, "threshold_insensitive", shift.rel_shift < THRESHOLD_SHIFT_TOL, shift.rel_shift)

    # dispatch

    def run_jobs(self, config: ExperimentConfig, jobs: List[Job], root: Path) -> List[JobOutcome]:
        """Outcomes in job-index order, whatever the worker count"""
        execute = partial(_execute_job, config, str(root))
        if config.workers <= 1 or len(jobs) <= 1:
            return [execute(job) for job in jobs]
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            return list(pool.map(execute, jobs))

    def run_experiment(self, config: ExperimentConfig, output_dir: Optional[Union[str, Path]] = None) -> Manifest:
        """Plan, dispatch and persist one experiment; the manifest lists every artifact and invariant"""
        root = Path(output_dir or config.output_dir or settings.output_dir)
        store = ArtifactStore(root, config.label)
        started_at = datetime.now(timezone.utc).isoformat()
        start = time.perf_counter()
        jobs = self.plan(config)
        logger.info(f"Running {config.label}: {len(jobs)} jobs on {config.workers} worker(s)")
        outcomes = self.run_jobs(config, jobs, root)
        if config.experiment in LIFESPAN_KINDS:
            outcomes.append(self._reduce_lifespan(config, outcomes, store))

        artifacts, invariants, failures = [], {}, {}
        for outcome in sorted(outcomes, key=lambda o: o.index):
            artifacts.extend(outcome.artifacts)
            invariants.update({f"{outcome.job_id}/{name}": ok for name, ok in outcome.invariants.items()})
            if not outcome.ok:
                failures[outcome.job_id] = outcome.error or "failed"
        manifest = Manifest(experiment=config.label, kind=config.experiment,
                            config=config.model_dump(mode="json", exclude_none=True), started_at=started_at,
                            wall_time=time.perf_counter() - start, artifacts=artifacts, invariants=invariants,
                            failures=failures)
        self._record_values(store, outcomes)
        store.write_manifest(manifest)
        status = "passed" if manifest.passed else "FAILED"
        logger.info(f"{config.label} {status} in {manifest.wall_time:.1f}s")
        return manifest

    def _record_values(self, store: ArtifactStore, outcomes: List[JobOutcome]):
        values: Dict[str, Dict[str, Optional[float]]] = {o.job_id: o.values for o in outcomes if o.values}
        if values:
            store.write_json("", "values.json", values)

    # fast tier

    def verify_configs(self) -> List[ExperimentConfig]:
        """The small invariant suite behind the verify command"""
        return [
            ExperimentConfig(experiment=ExperimentKind.PHI_CHECKS, name="verify-phi", mu0=1.0, r_max=50.0),
            ExperimentConfig(experiment=ExperimentKind.DISSIPATION, name="verify-dissipation", mu0=2.0,
                             dx=2.0**-7, t_end=2.0),
            ExperimentConfig(experiment=ExperimentKind.SIMULATE, name="verify-free-wave", mu0=0.0,
                             dx=2.0**-6, t_end=2.0),
            ExperimentConfig(experiment=ExperimentKind.PICARD, name="verify-picard", mu0=0.5,
                             nonlinearity=NonlinearityType.ABS_P, p=6.0, eps=0.25, t_end=20.0, K=5,
                             quadrature=QuadratureRule.TRAPEZOID),
        ]

    def run_verify(self, output_dir: Optional[Union[str, Path]] = None, workers: int = 1) -> List[Manifest]:
        manifests = []
        for config in self.verify_configs():
            manifests.append(self.run_experiment(config.model_copy(update={"workers": workers}), output_dir))
        return manifests


experiment_service = ExperimentService()
