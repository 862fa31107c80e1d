import logging
import math
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from dampwave.core.config import settings
from dampwave.core.errors import BudgetExceededError
from dampwave.models.duhamel import PicardIterate, PicardResult, PropagationRatio, QuadratureRule, WeightedNorm
from dampwave.models.potential import PotentialParams
from dampwave.models.wave import Field, Grid, Nonlinearity, Scheme, SolverConfig, WaveState
from dampwave.services.energy_service import decay_exponent, default_A, energy_service
from dampwave.services.potential_service import damping
from dampwave.services.wave_service import LeapfrogStepper, gradient, laplacian, wave_service

logger = logging.getLogger(__name__)

DEFAULT_QUAD_STEPS = 10


def _linear(config: SolverConfig) -> SolverConfig:
    return config.model_copy(update={"nonlinearity": Nonlinearity.none(), "scheme": Scheme.LEAPFROG})


def _l2(rows: np.ndarray, grid: Grid) -> np.ndarray:
    return np.sqrt(trapezoid(rows**2, dx=grid.dx, axis=-1))


class DuhamelService:
    def propagate_homogeneous(self, g: Field, h: Field, s0: float, t: float, config: SolverConfig) -> WaveState:
        """Linear solution at t started from (g, h) at time s0"""
        if t < s0:
            raise ValueError(f"t={t} precedes s0={s0}")
        if t == s0:
            return WaveState.initial(g, h, t=s0)
        linear = _linear(config).model_copy(update={"t_end": t - s0, "R0": config.R0 + s0})
        return wave_service.run(g, h, linear, start_time=s0).final

    def _propagate_blocks(self, grid: Grid, config: SolverConfig, u: np.ndarray, v: np.ndarray,
                          block: int, blocks: int, cone: float) -> Tuple[np.ndarray, np.ndarray]:
        """Linear leapfrog from (u, v) supported in |x| <= cone; rows hold the state every ``block`` steps"""
        stepper = LeapfrogStepper(grid, config, cone)
        stepper.reset(u, v)
        us = np.zeros((blocks + 1, grid.nx))
        vs = np.zeros((blocks + 1, grid.nx))
        us[0], vs[0] = u, v
        for b in range(1, blocks + 1):
            for _ in range(block):
                stepper.advance()
            us[b], vs[b] = stepper.u, stepper.v
        return us, vs

    def _duhamel(self, grid: Grid, config: SolverConfig, sources: np.ndarray, block: int,
                 rule: QuadratureRule) -> Tuple[np.ndarray, np.ndarray]:
        """Quadrature of int_0^t S(t, s) F(s) ds on the block times; S(t, s)F is (0, F) propagated from s"""
        blocks = sources.shape[0] - 1
        h = block * config.dt(grid)
        du = np.zeros_like(sources)
        dv = np.zeros_like(sources)
        for j in range(blocks):
            if not sources[j].any():
                continue
            weight = 0.5 * h if (rule == QuadratureRule.TRAPEZOID and j == 0) else h
            # sources at s_j inherit the reach of v there: R0 + s_j + dt
            cone = config.R0 + (j * block + 1) * config.dt(grid)
            us, vs = self._propagate_blocks(grid, config, np.zeros(grid.nx), sources[j], block, blocks - j, cone)
            du[j + 1:] += weight * us[1:]
            dv[j + 1:] += weight * vs[1:]
        if rule == QuadratureRule.TRAPEZOID:
            # endpoint s = t: S(t, t)F = (0, F)
            dv[1:] += 0.5 * h * sources[1:]
        return du, dv

    def weighted_norm(self, u: np.ndarray, v: np.ndarray, source: np.ndarray, times: np.ndarray, grid: Grid,
                      mu0: float, alpha: float, T: float) -> WeightedNorm:
        """X(T) norm of a sampled solution of w_tt - w_xx + V w_t = source"""
        dx = grid.dx
        V = damping(grid.x, mu0)
        u_x = gradient(u, dx)
        u_xx = laplacian(u, dx)
        v_x = gradient(v, dx)
        v_t = u_xx - V * v + source
        s = 1.0 + times
        bracket = (_l2(u, grid) / s + np.hypot(_l2(u_x, grid), _l2(u_xx, grid))
                   + np.hypot(_l2(v, grid), _l2(v_x, grid)) + _l2(v_t, grid))
        value = float(np.max(s ** (0.5 * alpha) * bracket)) if times.size else 0.0
        return WeightedNorm(value=value, alpha=alpha, T=T)

    def picard_iterate(self, u0: Field, u1: Field, nonlinearity: Nonlinearity, K: int, T: float,
                       quad_dt: Optional[float] = None, config: Optional[SolverConfig] = None,
                       rule: QuadratureRule = QuadratureRule.LEFT) -> PicardResult:
        """K applications of u -> R(t)(u0, u1) + int_0^t S(t, s) f(u_t(s), u_x(s)) ds"""
        if K < 1:
            raise ValueError(f"K must be at least 1, got {K}")
        if config is None:
            raise ValueError("picard_iterate needs a SolverConfig for mu0, cfl and R0")
        grid = u0.grid
        linear = _linear(config)
        dt = linear.dt(grid)
        if quad_dt is None:
            block = DEFAULT_QUAD_STEPS
        else:
            block = int(round(quad_dt / dt))
            if block < 1 or not math.isclose(block * dt, quad_dt, rel_tol=1e-9):
                raise ValueError(f"quad_dt={quad_dt} must be a positive multiple of dt={dt}")
        blocks = int(round(T / dt)) // block
        if blocks < 1:
            raise ValueError(f"horizon T={T} is shorter than one quadrature step")
        horizon = blocks * block * dt
        violations = linear.model_copy(update={"t_end": horizon}).containment_violations(grid)
        if violations:
            raise ValueError("; ".join(violations))
        cost = block * blocks * (blocks + 1) // 2
        if cost > settings.picard_budget:
            logger.error(f"Picard iterate needs {cost} steps, budget is {settings.picard_budget}")
            raise BudgetExceededError(f"one Picard iterate needs {cost} solver steps, budget is {settings.picard_budget}")
        if not math.isclose(horizon, T, rel_tol=1e-9):
            logger.info(f"Picard horizon snapped from {T} to {horizon:.6g}")

        rule = QuadratureRule(rule)
        mu0 = linear.mu0
        alpha = decay_exponent(mu0)
        times = np.arange(blocks + 1) * block * dt
        base_u, base_v = self._propagate_blocks(grid, linear, u0.samples, u1.samples, block, blocks, linear.R0)
        iterates = [PicardIterate(index=0, times=times, u=base_u, v=base_v, source=np.zeros_like(base_u))]
        for k in range(K):
            previous = iterates[-1]
            sources = nonlinearity.evaluate(previous.v, gradient(previous.u, grid.dx))
            du, dv = self._duhamel(grid, linear, sources, block, rule)
            iterates.append(PicardIterate(index=k + 1, times=times, u=base_u + du, v=base_v + dv, source=sources))
            logger.debug(f"Picard iterate {k + 1} of {K} done")

        norms = [self.weighted_norm(it.u, it.v, it.source, times, grid, mu0, alpha, horizon) for it in iterates]
        distances = [
            self.weighted_norm(b.u - a.u, b.v - a.v, b.source - a.source, times, grid, mu0, alpha, horizon)
            for a, b in zip(iterates[:-1], iterates[1:])
        ]
        ratios: List[Optional[float]] = [
            d1.value / d0.value if d0.value > 0 else None for d0, d1 in zip(distances[:-1], distances[1:])
        ]
        logger.info(f"Picard distances: {', '.join(f'{d.value:.3e}' for d in distances)}")
        return PicardResult(grid=grid, T=horizon, quad_dt=block * dt, rule=rule, alpha=alpha, norms=norms,
                            distances=distances, ratios=ratios, iterates=iterates)

    def propagation_ratio(self, g: Field, h: Field, s0: float, duration: float, config: SolverConfig,
                          sample_every: float = 1.0) -> PropagationRatio:
        """max over t of [WC(t)/WC(s0)] / ((1+s0)/(1+t))^alpha for the homogeneous flow from s0"""
        mu0 = config.mu0
        params = PotentialParams(mu0=mu0)
        alpha = decay_exponent(mu0)
        A = default_A(mu0, config.R0)
        linear = _linear(config).model_copy(update={"t_end": duration, "R0": config.R0 + s0})
        sample_times = s0 + np.arange(0.0, duration + 0.5 * sample_every, sample_every)
        trajectory = wave_service.run(g, h, linear, sample_times=sample_times, start_time=s0).collect()
        combos = [energy_service.compute_report(state, params, A).weighted_combo for state in trajectory.states]
        if combos[0] == 0:
            return PropagationRatio(s0=s0, alpha=alpha, times=trajectory.sample_times, ratios=[0.0] * len(combos),
                                    max_ratio=0.0)
        times = [state.t for state in trajectory.states]
        ratios = [(wc / combos[0]) / ((1.0 + s0) / (1.0 + t)) ** alpha for wc, t in zip(combos, times)]
        return PropagationRatio(s0=s0, alpha=alpha, times=times, ratios=ratios, max_ratio=max(ratios))

    def distances_frame(self, result: PicardResult) -> pd.DataFrame:
        ratios = [None] + result.ratios
        return pd.DataFrame({"k": range(len(result.distances)), "distance": result.distance_values,
                             "ratio": ratios})

    def iterate_frame(self, result: PicardResult, index: int) -> pd.DataFrame:
        """Long-format (t, x, u, v) rows of one iterate"""
        iterate = result.iterates[index]
        x = result.grid.x
        return pd.DataFrame({
            "t": np.repeat(iterate.times, x.size),
            "x": np.tile(x, iterate.times.size),
            "u": iterate.u.ravel(),
            "v": iterate.v.ravel(),
        })


duhamel_service = DuhamelService()
