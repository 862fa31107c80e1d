import logging
import math
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import linregress

from dampwave.core.errors import InsufficientDataError, NonlinearTrajectoryError, ThresholdError
from dampwave.models.energy import DecayFit, DissipationStudy, EnergyReport, EquivalenceBound, MonotoneCheck
from dampwave.models.potential import PotentialParams
from dampwave.models.wave import Grid, InitialProfile, Nonlinearity, SolverConfig, WaveState
from dampwave.services.potential_service import damping
from dampwave.services.wave_service import Trajectory, gradient, laplacian, wave_service

logger = logging.getLogger(__name__)

DEFAULT_WINDOW = (20.0, 400.0)
MIN_FIT_POINTS = 10
MONOTONE_SLACK = 1e-8


def default_mu(mu0: float) -> float:
    """mu just below min(1, mu0)"""
    return min(1.0, mu0) * (1.0 - 1e-2)


def default_A(mu0: float, R0: float) -> float:
    return max(1.25, (1.0 + R0) / (2.0 * mu0))


def decay_exponent(mu0: float, mu: Optional[float] = None) -> float:
    """alpha = mu for mu0 <= 1 and 1 otherwise"""
    if mu0 > 1:
        return 1.0
    return default_mu(mu0) if mu is None else mu


def decay_thresholds(mu0: float, R0: float, mu: float) -> Tuple[Optional[float], Optional[float]]:
    """(t0, t1): past t0 the E2 bounds hold (mu0 <= 1), past t1 the E4 bounds hold (mu0 > 1)"""
    if mu0 <= 1:
        return mu * R0 / (mu0 - mu), None
    return None, R0 / (mu0 - 1.0)


def _integral(values: np.ndarray, grid: Grid) -> float:
    return float(trapezoid(values, dx=grid.dx))


def _ratio(value: float, report: EnergyReport) -> Optional[float]:
    return value / report.weighted_combo if report.weighted_combo > 0 else None


class EnergyService:
    def compute_report(self, state: WaveState, params: PotentialParams, A: float,
                       mu: Optional[float] = None) -> EnergyReport:
        """Every energy functional of ``state`` by composite trapezoid quadrature.

        E0 is the leapfrog energy of the state (``WaveService.leapfrog_energy``), which the
        scheme dissipates exactly; it agrees with 1/2 int u_x^2 + u_t^2 to second order.
        """
        mu0 = params.mu0
        if A <= 0:
            raise ValueError(f"A must be positive, got {A}")
        if mu is None:
            mu = default_mu(mu0)
        elif mu0 <= 1 and not 0 < mu < mu0:
            raise ValueError(f"mu must lie in (0, mu0={mu0}), got {mu}")
        elif mu <= 0:
            raise ValueError(f"mu must be positive, got {mu}")

        grid = state.grid
        t = state.t
        u, v = state.u.samples, state.v.samples
        ux = gradient(u, grid.dx)
        V = damping(grid.x, mu0)
        s = t + 1.0

        u2 = _integral(u**2, grid)
        ux2 = _integral(ux**2, grid)
        v2 = _integral(v**2, grid)
        Vu2 = _integral(V * u**2, grid)
        uv = _integral(u * v, grid)

        E0 = wave_service.leapfrog_energy(state)
        I_func = uv + u2 / (2.0 * s) + 0.5 * Vu2
        E1 = uv + (1.0 - mu) * u2 / (2.0 * s) + 0.5 * Vu2
        E3 = uv + 0.5 * Vu2
        return EnergyReport(
            t=t,
            E0=E0,
            I_func=I_func,
            F_A=A * E0 + I_func / (2.0 * s),
            E1=E1,
            E2=E0 + mu * E1 / (2.0 * s),
            E3=E3,
            E4=E0 + E3 / (2.0 * s),
            norm_u_L2=math.sqrt(u2),
            norm_ux_L2=math.sqrt(ux2),
            norm_ut_L2=math.sqrt(v2),
            norm_sqrtV_u_L2=math.sqrt(Vu2),
            weighted_combo=u2 / s**2 + Vu2 / s + v2 + ux2,
            A=A,
            mu=mu,
        )

    def weighted_combo(self, state: WaveState, mu0: float) -> float:
        """weighted_combo alone; needs no A or mu, so it also serves undamped and nonlinear runs"""
        grid = state.grid
        u, v = state.u.samples, state.v.samples
        s = state.t + 1.0
        return (_integral(u**2, grid) / s**2 + _integral(damping(grid.x, mu0) * u**2, grid) / s
                + _integral(v**2, grid) + _integral(gradient(u, grid.dx) ** 2, grid))

    def reports(self, states: Iterable[WaveState], params: PotentialParams, A: float,
                mu: Optional[float] = None) -> List[EnergyReport]:
        return [self.compute_report(state, params, A, mu) for state in states]

    def derivative_energy(self, state: WaveState, mu0: float, nonlinearity: Optional[Nonlinearity] = None) -> float:
        """|sqrt(V) u_t|^2/(1+t) + |u_tt|^2 + |u_xt|^2 + |u_xx|^2 with u_tt taken from the equation"""
        grid = state.grid
        u, v = state.u.samples, state.v.samples
        V = damping(grid.x, mu0)
        u_xx = laplacian(u, grid.dx)
        u_tt = u_xx - V * v
        if nonlinearity is not None and not nonlinearity.is_linear:
            u_tt = u_tt + nonlinearity.evaluate(v, gradient(u, grid.dx))
        u_xt = gradient(v, grid.dx)
        return (_integral(V * v**2, grid) / (1.0 + state.t) + _integral(u_tt**2, grid)
                + _integral(u_xt**2, grid) + _integral(u_xx**2, grid))

    def _linear_states(self, trajectory: Trajectory) -> List[WaveState]:
        if not trajectory.config.nonlinearity.is_linear:
            logger.error("Energy identities requested on a nonlinear trajectory")
            raise NonlinearTrajectoryError("energy identities hold for linear runs only")
        return list(trajectory.collect().states)

    def dissipation_residuals(self, trajectory: Trajectory) -> Tuple[List[float], List[float]]:
        """(times, |dE0/dt + int V v^2| / max(1, E0(0))) at interior samples.

        Needs a trajectory sampled at every step. E0 is the report's E0, v the state's
        centred velocity and dE0/dt the central difference of E0 over two steps.
        """
        states = self._linear_states(trajectory)
        if len(states) < 3:
            return [], []
        dt = trajectory.dt
        steps = np.diff([s.t for s in states])
        if not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
            raise ValueError("dissipation residuals need a trajectory sampled at every step")
        grid = trajectory.grid
        V = damping(grid.x, trajectory.config.mu0)
        E0 = [wave_service.leapfrog_energy(s) for s in states]
        scale = max(1.0, E0[0])
        times, residuals = [], []
        for k in range(1, len(states) - 1):
            rate = (E0[k + 1] - E0[k - 1]) / (2.0 * dt)
            loss = _integral(V * states[k].v.samples**2, grid)
            times.append(states[k].t)
            residuals.append(abs(rate + loss) / scale)
        return times, residuals

    def verify_dissipation(self, trajectory: Trajectory, params: Optional[PotentialParams] = None) -> float:
        """Largest scaled residual of dE0/dt = -int V v^2 over the sampled times"""
        if params is not None and not math.isclose(params.mu0, trajectory.config.mu0):
            raise ValueError(f"params.mu0={params.mu0} differs from the trajectory's mu0={trajectory.config.mu0}")
        _, residuals = self.dissipation_residuals(trajectory)
        return max(residuals, default=0.0)

    def dissipation_study(self, profile: InitialProfile, R0: float, eps: float, base_grid: Grid,
                          config: SolverConfig, levels: int = 2) -> DissipationStudy:
        """Residual of the dissipation identity while dx and dt halve together"""
        config = config.model_copy(update={"R0": R0})
        dxs, residuals = [], []
        for level in range(levels + 1):
            grid = base_grid.refined(level)
            u0, u1 = wave_service.make_initial_data(profile, R0, eps, grid)
            dt = config.dt(grid)
            steps = int(round(config.t_end / dt))
            trajectory = wave_service.run(u0, u1, config, sample_times=np.arange(steps + 1) * dt)
            dxs.append(grid.dx)
            residuals.append(self.verify_dissipation(trajectory))
            logger.info(f"Dissipation level {level}: dx={grid.dx:.4g} residual={residuals[-1]:.3e}")
        orders = [float(np.log2(residuals[k] / residuals[k + 1])) for k in range(levels)]
        return DissipationStudy(dxs=dxs, residuals=residuals, orders=orders)

    def verify_monotone_F_A(self, trajectory: Trajectory, params: PotentialParams, R0: float) -> MonotoneCheck:
        """F_A nonincreasing along the samples with A = max(5/4, (1+R0)/(2 mu0))"""
        states = self._linear_states(trajectory)
        A = default_A(params.mu0, R0)
        values = [self.compute_report(state, params, A).F_A for state in states]
        times = [state.t for state in states]
        first_violation = None
        if values:
            slack = MONOTONE_SLACK * abs(values[0])
            for k in range(1, len(values)):
                if values[k] > values[k - 1] + slack:
                    first_violation = times[k]
                    logger.warning(f"F_A increased at t={times[k]:.6g}: {values[k - 1]:.17g} -> {values[k]:.17g}")
                    break
        return MonotoneCheck(monotone=first_violation is None, A=A, first_violation=first_violation,
                             times=times, values=values)

    def F_A_bound(self, report: EnergyReport) -> EquivalenceBound:
        """F_A / weighted_combo in [1/8, (2A+1)/4], at every t"""
        return EquivalenceBound(functional="F_A", ratio=_ratio(report.F_A, report), lower=0.125,
                                upper=(2.0 * report.A + 1.0) / 4.0)

    def decay_functional_bound(self, report: EnergyReport, params: PotentialParams, R0: float,
                               mu: Optional[float] = None) -> EquivalenceBound:
        """E2 (mu0 <= 1) or E4 (mu0 > 1) against weighted_combo; only valid past t0 or t1"""
        mu0 = params.mu0
        mu = report.mu if mu is None else mu
        t0, t1 = decay_thresholds(mu0, R0, mu)
        threshold, name = (t0, "t0") if mu0 <= 1 else (t1, "t1")
        if report.t < threshold:
            raise ThresholdError(f"t={report.t} is below {name}={threshold:.6g}")
        if mu0 <= 1:
            return EquivalenceBound(functional="E2", ratio=_ratio(report.E2, report), lower=mu * (1.0 - mu) / 8.0,
                                    upper=(2.0 + mu) / 4.0)
        return EquivalenceBound(functional="E4", ratio=_ratio(report.E4, report), lower=1.0 / 32.0, upper=0.75)

    def equivalence_bounds(self, report: EnergyReport, params: PotentialParams, R0: float,
                           mu: Optional[float] = None) -> List[EquivalenceBound]:
        """Ratios functional / weighted_combo with the explicit constants of the decay estimates.

        The F_A bound is always included; E2 or E4 joins it once t is past its threshold.
        """
        bounds = [self.F_A_bound(report)]
        try:
            bounds.append(self.decay_functional_bound(report, params, R0, mu))
        except ThresholdError as e:
            logger.debug(f"Skipping the decay functional bound: {e}")
        return bounds

    def verify_equivalence_bounds(self, report: EnergyReport, params: PotentialParams, R0: float,
                                  mu: Optional[float] = None) -> bool:
        bounds = self.equivalence_bounds(report, params, R0, mu)
        for bound in bounds:
            if not bound.holds:
                logger.warning(f"{bound.functional}/weighted_combo={bound.ratio:.6g} outside "
                               f"[{bound.lower:.6g}, {bound.upper:.6g}] at t={report.t}")
        return all(bound.holds for bound in bounds)

    def fit_decay(self, series: Sequence[Tuple[float, float]],
                  window: Tuple[float, float] = DEFAULT_WINDOW) -> DecayFit:
        """Fit value = c (1+t)^(-slope) by least squares in log-log coordinates"""
        t_lo, t_hi = window
        if not t_lo < t_hi:
            raise ValueError(f"window must satisfy t_lo < t_hi, got {window}")
        points = [(t, value) for t, value in series if t_lo <= t <= t_hi]
        if len(points) < MIN_FIT_POINTS:
            raise InsufficientDataError(f"decay fit needs {MIN_FIT_POINTS} points in {window}, got {len(points)}")
        t, values = np.array(points).T
        if np.any(values <= 0):
            raise ValueError("decay fit needs strictly positive values")
        fit = linregress(np.log1p(t), np.log(values))
        r_squared = min(max(float(fit.rvalue) ** 2, 0.0), 1.0)
        return DecayFit(window=(t_lo, t_hi), slope=-float(fit.slope), intercept=float(fit.intercept),
                        r_squared=r_squared, points=len(points))

    def report_frame(self, reports: Sequence[EnergyReport]) -> pd.DataFrame:
        """One row per sampled t, one column per functional"""
        return pd.DataFrame([report.model_dump() for report in reports])


energy_service = EnergyService()
