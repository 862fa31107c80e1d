import logging
import math
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from dampwave.core.errors import CflViolationError, NumericalBlowupError
from dampwave.models.wave import (
    ConvergenceStudy,
    Field,
    Grid,
    InitialProfile,
    Scheme,
    SolverConfig,
    TerminationReport,
    TerminationStatus,
    WaveState,
)
from dampwave.services.potential_service import damping

logger = logging.getLogger(__name__)


def bump(x: np.ndarray, center: float, half_width: float) -> np.ndarray:
    """cos^4 bump of height 1, C^3, supported in (center - half_width, center + half_width)"""
    s = (x - center) / half_width
    out = np.zeros_like(x, dtype=float)
    inside = np.abs(s) < 1.0
    out[inside] = np.cos(0.5 * np.pi * s[inside]) ** 4
    return out


def laplacian(u: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(u)
    out[..., 1:-1] = (u[..., 2:] - 2.0 * u[..., 1:-1] + u[..., :-2]) / dx**2
    return out


def gradient(u: np.ndarray, dx: float) -> np.ndarray:
    out = np.zeros_like(u)
    out[..., 1:-1] = (u[..., 2:] - u[..., :-2]) / (2.0 * dx)
    return out


def perturbation_factor(x: np.ndarray, R0: float, amplitude: float, seed: int) -> np.ndarray:
    """1 + amplitude * sum_k a_k cos(k pi x / (2 R0)), k = 1..4, a_k uniform in [-1/4, 1/4]

    The same seed gives the same factor on every grid.
    """
    if not 0 <= amplitude < 1:
        raise ValueError(f"perturbation amplitude must lie in [0, 1), got {amplitude}")
    coefficients = np.random.default_rng(seed).uniform(-0.25, 0.25, size=4)
    modes = np.cos(np.outer(x, np.arange(1, 5)) * np.pi / (2.0 * R0))
    return 1.0 + amplitude * modes @ coefficients


def crop(field: Field, half_width: float) -> Field:
    """Restriction to the nodes with |x| <= half_width, centred on x = 0"""
    grid = field.grid
    half = min(int(math.ceil(half_width / grid.dx - 1e-9)), grid.nx // 2)
    centre = grid.nx // 2
    cropped = Grid(L=half * grid.dx, nx=2 * half + 1)
    return Field(grid=cropped, samples=field.samples[centre - half:centre + half + 1].copy())


def _staggered(upper: np.ndarray, lower: np.ndarray, dt: float, dx: float) -> float:
    kinetic = 0.5 * dx * np.sum(((upper - lower) / dt) ** 2)
    potential = 0.5 * dx * np.sum((np.diff(upper) / dx) * (np.diff(lower) / dx))
    return float(kinetic + potential)


class LeapfrogStepper:
    """Three-level scheme with the damping averaged over levels n+1 and n-1.

    (u+ - 2u + u-)/dt^2 - D2 u + V (u+ - u-)/(2dt) = f(u_t, u_x), solved for u+.
    The stepper holds levels n and n+1 and the centred velocity (u+ - u-)/(2dt) at n;
    f is taken at level n+1 with the one-sided second-order velocity there.

    With ``cone`` set, level m is zeroed beyond cone + m dt + dx/2: data supported in
    |x| <= cone cannot reach further at unit speed.
    """

    def __init__(self, grid: Grid, config: SolverConfig, cone: Optional[float] = None):
        self.dx = grid.dx
        self.dt = config.dt(grid)
        self.nonlinearity = config.nonlinearity
        V = damping(grid.x, config.mu0)
        self.V = V
        self.plus = 1.0 + 0.5 * self.dt * V
        self.minus = 1.0 - 0.5 * self.dt * V
        self.abs_x = np.abs(grid.x)
        self.cone = cone
        self.level = 0
        self.u: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.u_next: Optional[np.ndarray] = None

    def reset(self, u: np.ndarray, v: np.ndarray, u_next: Optional[np.ndarray] = None):
        """Start from level 0; without ``u_next`` the next level comes from a Taylor step"""
        self.level = 0
        self.u = np.array(u, dtype=float)
        self.v = np.array(v, dtype=float)
        self.u_next = self._bootstrap() if u_next is None else np.array(u_next, dtype=float)

    def _limit(self, w: np.ndarray, level: int):
        w[0] = w[-1] = 0.0
        if self.cone is not None:
            w[self.abs_x > self.cone + level * self.dt + 0.5 * self.dx] = 0.0

    def acceleration(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return laplacian(u, self.dx) - self.V * v + self.nonlinearity.evaluate(v, gradient(u, self.dx))

    def _bootstrap(self) -> np.ndarray:
        # the leapfrog step from the virtual level u - 2 dt v behind the data
        u, v, dt = self.u, self.v, self.dt
        u_next = u + dt * v + 0.5 * dt**2 * self.acceleration(u, v)
        self._limit(u_next, self.level + 1)
        return u_next

    def advance(self) -> Tuple[np.ndarray, np.ndarray]:
        dt = self.dt
        u, v, u_next = self.u, self.v, self.u_next
        source = laplacian(u_next, self.dx)
        if not self.nonlinearity.is_linear:
            velocity = 2.0 * (u_next - u) / dt - v
            source += self.nonlinearity.evaluate(velocity, gradient(u_next, self.dx))
        u_after = (2.0 * u_next - self.minus * u + dt**2 * source) / self.plus
        self._limit(u_after, self.level + 2)
        self.level += 1
        self.u, self.v, self.u_next = u_next, (u_after - u) / (2.0 * dt), u_after
        return self.u, self.v


class OracleStepper:
    """Method of lines on the same grid, classical RK4 with oracle_substeps per dt"""

    def __init__(self, grid: Grid, config: SolverConfig, cone: Optional[float] = None):
        self.dx = grid.dx
        self.dt = config.dt(grid)
        self.h = self.dt / config.oracle_substeps
        self.substeps = config.oracle_substeps
        self.nonlinearity = config.nonlinearity
        self.V = damping(grid.x, config.mu0)
        self.abs_x = np.abs(grid.x)
        self.cone = cone
        self.level = 0
        self.u: Optional[np.ndarray] = None
        self.v: Optional[np.ndarray] = None
        self.u_next: Optional[np.ndarray] = None

    def reset(self, u: np.ndarray, v: np.ndarray, u_next: Optional[np.ndarray] = None):
        self.level = 0
        self.u = np.array(u, dtype=float)
        self.v = np.array(v, dtype=float)

    def rhs(self, u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        a = laplacian(u, self.dx) - self.V * v + self.nonlinearity.evaluate(v, gradient(u, self.dx))
        a[0] = a[-1] = 0.0
        return v, a

    def advance(self) -> Tuple[np.ndarray, np.ndarray]:
        u, v, h = self.u, self.v, self.h
        for _ in range(self.substeps):
            k1u, k1v = self.rhs(u, v)
            k2u, k2v = self.rhs(u + 0.5 * h * k1u, v + 0.5 * h * k1v)
            k3u, k3v = self.rhs(u + 0.5 * h * k2u, v + 0.5 * h * k2v)
            k4u, k4v = self.rhs(u + h * k3u, v + h * k3v)
            u = u + (h / 6.0) * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            v = v + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v)
        self.level += 1
        if self.cone is not None:
            outside = self.abs_x > self.cone + self.level * self.dt + 0.5 * self.dx
            u[outside] = v[outside] = 0.0
        self.u, self.v = u, v
        return u, v


def make_stepper(grid: Grid, config: SolverConfig, cone: Optional[float] = None):
    if config.cfl > 1:
        raise CflViolationError(f"cfl={config.cfl} exceeds 1")
    if config.scheme == Scheme.ORACLE_RK:
        return OracleStepper(grid, config, cone)
    return LeapfrogStepper(grid, config, cone)


class Trajectory:
    """Lazy sequence of sampled WaveStates; ``report`` is set once evolution stops.

    Iterating twice replays cached states and resumes where evolution left off.
    Leapfrog states carry the following level, so the solver runs one step past t_end.
    """

    def __init__(self, u0: Field, u1: Field, config: SolverConfig, sample_times: Sequence[float],
                 start_time: float = 0.0):
        self.config = config
        self.grid = u0.grid
        self.start_time = start_time
        self.dt = config.dt(self.grid)
        self.n_end = int(round(config.t_end / self.dt))
        indices = {min(max(int(round((t - start_time) / self.dt)), 0), self.n_end) for t in sample_times}
        self.sample_indices = sorted(indices)
        self.states: List[WaveState] = []
        self.report: Optional[TerminationReport] = None
        self._u0 = u0.samples
        self._u1 = u1.samples
        self._evolution = self._evolve()
        self._exhausted = False

    @property
    def sample_times(self) -> List[float]:
        return [self.start_time + n * self.dt for n in self.sample_indices]

    def _state(self, n: int, stepper) -> WaveState:
        return WaveState.from_arrays(self.grid, stepper.u.copy(), stepper.v.copy(), self.start_time + n * self.dt,
                                     u_next=None if stepper.u_next is None else stepper.u_next.copy(),
                                     dt=self.dt)

    def _evolve(self) -> Iterator[WaveState]:
        config = self.config
        stepper = make_stepper(self.grid, config, cone=config.R0)
        with np.errstate(over="ignore", invalid="ignore"):
            stepper.reset(self._u0, self._u1)
        wanted = set(self.sample_indices)
        max_v = float(np.max(np.abs(self._u1)))
        if 0 in wanted:
            yield self._state(0, stepper)
        for n in range(1, self.n_end + 1):
            with np.errstate(over="ignore", invalid="ignore"):
                u, v = stepper.advance()
                peak = float(np.max(np.abs(v)))
                finite = math.isfinite(float(u.sum()))
            if not (peak <= config.blowup_threshold) or not finite:
                t = self.start_time + n * self.dt
                logger.info(f"Blow-up detected at t={t:.6g} (max|v|={peak:.3g})")
                self.report = TerminationReport(status=TerminationStatus.BLOWUP_DETECTED, t=t, steps=n,
                                                max_abs_v=max_v,
                                                reason="threshold" if math.isfinite(peak) else "non-finite")
                return
            max_v = max(max_v, peak)
            if n in wanted:
                yield self._state(n, stepper)
        self.report = TerminationReport(status=TerminationStatus.COMPLETED, t=self.start_time + self.n_end * self.dt,
                                        steps=self.n_end, max_abs_v=max_v)

    def __iter__(self) -> Iterator[WaveState]:
        index = 0
        while True:
            if index < len(self.states):
                yield self.states[index]
                index += 1
                continue
            if self._exhausted:
                return
            try:
                state = next(self._evolution)
            except StopIteration:
                self._exhausted = True
                return
            self.states.append(state)

    def collect(self) -> "Trajectory":
        for _ in self:
            pass
        return self

    @property
    def final(self) -> WaveState:
        self.collect()
        return self.states[-1]


class WaveService:
    def make_initial_data(self, profile: InitialProfile, R0: float, eps: float, grid: Grid,
                          custom_u0: Optional[np.ndarray] = None, custom_u1: Optional[np.ndarray] = None,
                          u0_weight: float = 1.0, u1_weight: float = 1.0, perturbation: float = 0.0,
                          seed: int = 0) -> Tuple[Field, Field]:
        """Compactly supported data (eps u0, eps u1) on (-R0, R0).

        A nonzero ``perturbation`` multiplies both profiles by a seeded smooth factor
        (see ``perturbation_factor``), which keeps the support unchanged.
        """
        if R0 >= grid.L:
            raise ValueError(f"R0={R0} must be smaller than the half-width L={grid.L}")
        if eps < 0:
            raise ValueError(f"eps must be nonnegative, got {eps}")
        x = grid.x
        profile = InitialProfile(profile)
        if profile == InitialProfile.BUMP:
            shape0 = shape1 = bump(x, 0.0, R0)
        elif profile == InitialProfile.DOUBLE_BUMP:
            # two outer bumps minus a central one: zero mean, positive against the growing phi
            half = 0.5 * R0
            shape0 = shape1 = bump(x, -half, half) + bump(x, half, half) - 2.0 * bump(x, 0.0, half)
        else:
            if custom_u0 is None and custom_u1 is None:
                raise ValueError("custom profile needs custom_u0 and/or custom_u1 samples")
            shape0 = np.zeros(grid.nx) if custom_u0 is None else np.asarray(custom_u0, dtype=float)
            shape1 = np.zeros(grid.nx) if custom_u1 is None else np.asarray(custom_u1, dtype=float)
            outside = np.abs(x) >= R0
            if np.any(shape0[outside] != 0) or np.any(shape1[outside] != 0):
                raise ValueError(f"custom samples must vanish outside (-{R0}, {R0})")
        if perturbation:
            factor = perturbation_factor(x, R0, perturbation, seed)
            shape0, shape1 = shape0 * factor, shape1 * factor
        u0 = Field(grid=grid, samples=eps * u0_weight * shape0)
        u1 = Field(grid=grid, samples=eps * u1_weight * shape1)
        return u0, u1

    def step(self, state: WaveState, config: SolverConfig) -> WaveState:
        """Advance one dt = cfl dx"""
        grid = state.grid
        stepper = make_stepper(grid, config)
        dt = stepper.dt
        u_next = state.u_next
        if u_next is not None and (state.dt is None or not math.isclose(state.dt, dt, rel_tol=1e-12)):
            logger.debug("Step size changed; bootstrapping from (u, v)")
            u_next = None
        with np.errstate(over="ignore", invalid="ignore"):
            stepper.reset(state.u.samples, state.v.samples, u_next)
            u, v = stepper.advance()
        t = state.t + dt
        following = stepper.u_next
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))
                and (following is None or np.all(np.isfinite(following)))):
            logger.error(f"Non-finite values after step to t={t:.6g}")
            raise NumericalBlowupError(t)
        return WaveState.from_arrays(grid, u.copy(), v.copy(), t,
                                     u_next=None if following is None else following.copy(), dt=dt)

    def run(self, u0: Field, u1: Field, config: SolverConfig, sample_times: Optional[Sequence[float]] = None,
            start_time: float = 0.0) -> Trajectory:
        """Lazy trajectory from (u0, u1) at start_time to start_time + t_end.

        The data must vanish beyond config.R0 (one cell of slack); every level of the
        run is zeroed outside R0 + elapsed time.
        """
        if u0.grid != u1.grid:
            raise ValueError("u0 and u1 must share a grid")
        violations = config.containment_violations(u0.grid)
        if violations:
            raise ValueError("; ".join(violations))
        outside = np.abs(u0.grid.x) > config.R0 + u0.grid.dx
        if u0.samples[outside].any() or u1.samples[outside].any():
            raise ValueError(f"data must vanish outside |x| <= R0={config.R0}")
        if sample_times is None:
            sample_times = [start_time, start_time + config.t_end]
        return Trajectory(u0, u1, config, sample_times, start_time=start_time)

    def support_radius(self, state: WaveState, tol: float) -> float:
        """Largest |x| where |u| or |v| exceeds tol, 0 if none"""
        if tol <= 0:
            raise ValueError(f"tol must be positive, got {tol}")
        active = (np.abs(state.u.samples) > tol) | (np.abs(state.v.samples) > tol)
        if not active.any():
            return 0.0
        return float(np.abs(state.grid.x[active]).max())

    def staggered_energy(self, state: WaveState) -> float:
        """Leapfrog energy at level n+1/2: 1/2 |(u^{n+1}-u^n)/dt|^2 + 1/2 sum dx D+u^{n+1} D+u^n.

        Conserved to roundoff without damping; with damping it drops by exactly
        dt sum dx V ((u^{n+1}-u^{n-1})/(2dt))^2 per step.
        """
        if state.u_next is None or state.dt is None:
            raise ValueError("staggered energy needs a state produced by the leapfrog scheme")
        return _staggered(state.u_next, state.u.samples, state.dt, state.grid.dx)

    def leapfrog_energy(self, state: WaveState) -> float:
        """Discrete energy at level n, the mean of the staggered energies at n-1/2 and n+1/2.

        It equals 1/2 |v|^2 + 1/2 |D+u|^2 up to O(dt^2) and is what the scheme conserves
        exactly without damping. A state with no following level gets 1/2 |v|^2 + 1/2 |D+u|^2.
        """
        dx = state.grid.dx
        u, v = state.u.samples, state.v.samples
        if state.u_next is None or state.dt is None:
            return float(0.5 * dx * (np.sum(v**2) + np.sum((np.diff(u) / dx) ** 2)))
        u_prev = state.u_next - 2.0 * state.dt * v
        return 0.5 * (_staggered(u, u_prev, state.dt, dx) + _staggered(state.u_next, u, state.dt, dx))

    def l2_norm(self, samples: np.ndarray, grid: Grid) -> float:
        """Discrete L2 norm sqrt(dx sum |.|^2)"""
        return float(np.sqrt(grid.dx * np.sum(samples**2)))

    def convergence_study(self, profile: InitialProfile, R0: float, eps: float, base_grid: Grid,
                          config: SolverConfig, levels: int = 3, u0_weight: float = 1.0,
                          u1_weight: float = 1.0) -> ConvergenceStudy:
        """Leapfrog against OracleRK at t_end while dx and dt halve together"""
        oracle = config.model_copy(update={"scheme": Scheme.ORACLE_RK, "R0": R0})
        leapfrog = config.model_copy(update={"scheme": Scheme.LEAPFROG, "R0": R0})
        dxs, errors = [], []
        for level in range(levels + 1):
            grid = base_grid.refined(level)
            u0, u1 = self.make_initial_data(profile, R0, eps, grid, u0_weight=u0_weight, u1_weight=u1_weight)
            a = self.run(u0, u1, leapfrog).final
            b = self.run(u0, u1, oracle).final
            dxs.append(grid.dx)
            errors.append(self.l2_norm(a.u.samples - b.u.samples, grid))
            logger.info(f"Convergence level {level}: dx={grid.dx:.4g} error={errors[-1]:.3e}")
        orders = [float(np.log2(errors[k] / errors[k + 1])) for k in range(levels)]
        return ConvergenceStudy(t=config.t_end, dxs=dxs, errors=errors, orders=orders)

    def snapshot_frame(self, state: WaveState) -> pd.DataFrame:
        return pd.DataFrame({"x": state.grid.x, "u": state.u.samples, "v": state.v.samples})


wave_service = WaveService()
