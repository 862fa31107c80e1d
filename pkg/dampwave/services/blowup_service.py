import logging
import math
from concurrent.futures import ProcessPoolExecutor
from functools import lru_cache, partial
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.stats import linregress

from dampwave.core.config import settings
from dampwave.core.errors import InsufficientDataError, SignConditionError
from dampwave.models.blowup import CriticalProbe, CriticalRow, LifespanConfig, LifespanFit, LifespanRecord, ThresholdShift
from dampwave.models.potential import PhiTable, PotentialParams
from dampwave.models.wave import Nonlinearity, NonlinearityType, SolverConfig
from dampwave.services.potential_service import potential_service
from dampwave.services.wave_service import crop, wave_service

logger = logging.getLogger(__name__)

MIN_LADDER = 5
MIN_FIT_RECORDS = 4


@lru_cache(maxsize=16)
def _phi_table(mu0: float, r_max: float) -> PhiTable:
    return potential_service.solve_phi(PotentialParams(mu0=mu0), r_max)


def theory_slope(mu0: float, p: float) -> float:
    """d log T / d log eps = -2(p-1) / (2 - mu0 (p-1)) on the subcritical branch"""
    if not mu0 * (p - 1.0) < 2.0:
        raise ValueError(f"mu0 (p-1) = {mu0 * (p - 1.0)} is not below 2")
    return -2.0 * (p - 1.0) / (2.0 - mu0 * (p - 1.0))


def critical_exponent(mu0: float) -> float:
    return 1.0 + 2.0 / mu0


def geometric_ladder(eps_max: float, n: int, ratio: float = math.sqrt(2.0)) -> List[float]:
    """eps_max, eps_max/ratio, ... (n values, decreasing)"""
    if eps_max <= 0 or n < 1 or ratio <= 1:
        raise ValueError(f"invalid ladder eps_max={eps_max}, n={n}, ratio={ratio}")
    return [eps_max / ratio**k for k in range(n)]


def _lifespan_job(eps: float, p: float, mu0: float, R0: float, base_config: LifespanConfig) -> LifespanRecord:
    return blowup_service.estimate_lifespan(eps, p, mu0, R0, base_config)


class BlowupService:
    def sign_integral(self, mu0: float, R0: float, base_config: LifespanConfig) -> float:
        """check_sign_condition of the unscaled data profile"""
        grid = base_config.grid
        u0, u1 = wave_service.make_initial_data(base_config.profile, R0, 1.0, grid,
                                                u0_weight=base_config.u0_weight, u1_weight=base_config.u1_weight,
                                                perturbation=base_config.perturbation, seed=base_config.seed)
        # the data vanish beyond R0, so the integral only needs phi there
        half_width = R0 + 2.0 * grid.dx
        u0, u1 = crop(u0, half_width), crop(u1, half_width)
        table = _phi_table(mu0, round(u0.grid.L, 12))
        return potential_service.check_sign_condition(u0, u1, table)

    def _run(self, eps: float, p: float, mu0: float, R0: float, base_config: LifespanConfig, level: int,
             t_end: float, threshold: float):
        grid = base_config.grid.refined(level)
        nonlinearity = Nonlinearity(kind=base_config.form, p=p)
        config = SolverConfig(cfl=base_config.cfl, t_end=t_end, blowup_threshold=threshold, mu0=mu0,
                              nonlinearity=nonlinearity, R0=R0)
        u0, u1 = wave_service.make_initial_data(base_config.profile, R0, eps, grid,
                                                u0_weight=base_config.u0_weight, u1_weight=base_config.u1_weight,
                                                perturbation=base_config.perturbation, seed=base_config.seed)
        return wave_service.run(u0, u1, config, sample_times=[]).collect().report, grid

    def estimate_lifespan(self, eps: float, p: float, mu0: float, R0: float,
                          base_config: LifespanConfig) -> LifespanRecord:
        """Numerical blow-up time, refined by halving dx and dt until it settles"""
        if p <= 1:
            raise ValueError(f"p must exceed 1, got {p}")
        shape_integral = self.sign_integral(mu0, R0, base_config)
        if shape_integral <= 0:
            logger.error(f"Sign condition fails for mu0={mu0}, R0={R0}: integral={shape_integral:.6g}")
            raise SignConditionError(f"data profile has nonpositive sign integral {shape_integral:.6g}")

        threshold = base_config.blowup_threshold
        common = dict(eps=eps, p=p, mu0=mu0, R0=R0, form=base_config.form, threshold_used=threshold,
                      sign_integral=eps * shape_integral)
        report, grid = self._run(eps, p, mu0, R0, base_config, 0, base_config.t_end, threshold)
        if not report.blew_up:
            logger.warning(f"eps={eps:.6g}: no blow-up before t={report.t:.6g}; record censored")
            return LifespanRecord(T_num=report.t, censored=True, dx=grid.dx, level_times=[], **common)

        level_times = [report.t]
        level, dx, converged = 0, grid.dx, False
        for next_level in range(1, base_config.max_refinements + 1):
            # a refined run that outlives the coarse lifespan by half is not chasing the same blow-up
            budget = min(base_config.t_end, 1.5 * level_times[-1])
            refined, refined_grid = self._run(eps, p, mu0, R0, base_config, next_level, budget, threshold)
            if not refined.blew_up:
                logger.warning(f"eps={eps:.6g}: level {next_level} ran to t={refined.t:.6g} without blow-up")
                break
            previous = level_times[-1]
            level_times.append(refined.t)
            level, dx = next_level, refined_grid.dx
            if abs(refined.t - previous) / previous < base_config.refinement_tol:
                converged = True
                break
        if not converged:
            logger.warning(f"eps={eps:.6g}: T_num not settled within {base_config.refinement_tol:.0%} "
                           f"after {level} refinements: {level_times}")
        logger.info(f"eps={eps:.6g}: T_num={level_times[-1]:.6g} at level {level}")
        return LifespanRecord(T_num=level_times[-1], censored=False, refinement_level=level, converged=converged,
                              level_times=level_times, dx=dx, **common)

    def threshold_shift(self, eps: float, p: float, mu0: float, R0: float, base_config: LifespanConfig,
                        threshold: float = 1e16) -> ThresholdShift:
        """Level-0 T_num at the configured threshold and at ``threshold``"""
        thresholds = (base_config.blowup_threshold, threshold)
        reports = [self._run(eps, p, mu0, R0, base_config, 0, base_config.t_end, value)[0] for value in thresholds]
        times = (reports[0].t, reports[1].t)
        rel_shift = None
        if reports[0].blew_up and reports[1].blew_up:
            rel_shift = abs(times[1] - times[0]) / times[0]
        return ThresholdShift(eps=eps, thresholds=thresholds, times=times, rel_shift=rel_shift)

    def run_ladder(self, eps_ladder: Sequence[float], p: float, mu0: float, R0: float,
                   base_config: LifespanConfig, workers: Optional[int] = None) -> List[LifespanRecord]:
        """One record per ladder entry, in ladder order whatever the worker count"""
        workers = settings.max_workers if workers is None else workers
        job = partial(_lifespan_job, p=p, mu0=mu0, R0=R0, base_config=base_config)
        if workers <= 1 or len(eps_ladder) <= 1:
            return [job(eps) for eps in eps_ladder]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, eps_ladder))

    def fit_lifespan_records(self, records: Sequence[LifespanRecord], mu0: float, p: float,
                             form: NonlinearityType = NonlinearityType.ABS_P) -> LifespanFit:
        """Least squares of log T_num on log eps over usable records"""
        target = theory_slope(mu0, p)
        usable = [record for record in records if record.usable]
        if len(usable) < MIN_FIT_RECORDS:
            raise InsufficientDataError(f"lifespan fit needs {MIN_FIT_RECORDS} uncensored records, got {len(usable)}")
        eps = np.array([record.eps for record in usable])
        T = np.array([record.T_num for record in usable])
        fit = linregress(np.log(eps), np.log(T))
        slope = float(fit.slope)
        exploratory = mu0 > 1
        if exploratory:
            logger.info(f"mu0={mu0} > 1: lifespan fit is exploratory")
        return LifespanFit(mu0=mu0, p=p, form=form, slope=slope, intercept=float(fit.intercept),
                           theory_slope=target, rel_error=abs(slope - target) / abs(target),
                           r_squared=min(float(fit.rvalue) ** 2, 1.0), eps_range=(float(eps.min()), float(eps.max())),
                           points_used=len(usable), exploratory=exploratory, records=list(records))

    def sweep_and_fit(self, eps_ladder: Sequence[float], p: float, mu0: float, R0: float,
                      base_config: LifespanConfig, workers: Optional[int] = None) -> LifespanFit:
        theory_slope(mu0, p)
        if len(eps_ladder) < MIN_LADDER:
            raise ValueError(f"eps ladder needs at least {MIN_LADDER} entries, got {len(eps_ladder)}")
        if any(eps <= 0 for eps in eps_ladder):
            raise ValueError("eps ladder entries must be positive")
        records = self.run_ladder(eps_ladder, p, mu0, R0, base_config, workers)
        censored = sum(record.censored for record in records)
        if censored:
            logger.warning(f"{censored} of {len(records)} ladder runs censored")
        return self.fit_lifespan_records(records, mu0, p, base_config.form)

    def fit_critical_rows(self, rows: Sequence[CriticalRow], mu0: float, p: float,
                          records: Sequence[LifespanRecord] = ()) -> CriticalProbe:
        if len(rows) < 2:
            raise InsufficientDataError(f"critical probe needs two uncensored runs, got {len(rows)}")
        fit = linregress([row.eps_power for row in rows], [row.log_T for row in rows])
        return CriticalProbe(mu0=mu0, p=p, rows=list(rows), slope=float(fit.slope), intercept=float(fit.intercept),
                             r_squared=min(float(fit.rvalue) ** 2, 1.0),
                             censored=sum(record.censored for record in records), records=list(records))

    def critical_case_probe(self, p: float, eps_ladder: Sequence[float], mu0: float, R0: float,
                            base_config: LifespanConfig, workers: Optional[int] = None) -> CriticalProbe:
        """log T_num against eps^-(p-1) at the critical power"""
        if not math.isclose(p, critical_exponent(mu0), rel_tol=1e-12):
            raise ValueError(f"critical probe needs p = 1 + 2/mu0 = {critical_exponent(mu0)}, got {p}")
        records = self.run_ladder(eps_ladder, p, mu0, R0, base_config, workers)
        rows = [CriticalRow(eps=r.eps, log_T=math.log(r.T_num), eps_power=r.eps ** (1.0 - p))
                for r in records if r.usable]
        if not rows:
            logger.error("Critical probe: every run was censored")
            raise InsufficientDataError("all critical-probe runs were censored")
        return self.fit_critical_rows(rows, mu0, p, records)

    def is_monotone(self, records: Sequence[LifespanRecord]) -> bool:
        """Uncensored T_num strictly decreasing in eps"""
        usable = sorted((r for r in records if not r.censored), key=lambda r: r.eps)
        return all(a.T_num > b.T_num for a, b in zip(usable, usable[1:]))

    def records_frame(self, records: Sequence[LifespanRecord]) -> pd.DataFrame:
        return pd.DataFrame({
            "eps": [r.eps for r in records],
            "p": [r.p for r in records],
            "mu0": [r.mu0 for r in records],
            "form": [r.form.value for r in records],
            "T_num": [r.T_num for r in records],
            "level": [r.refinement_level for r in records],
            "censored": [r.censored for r in records],
            "sign_integral": [r.sign_integral for r in records],
        })


blowup_service = BlowupService()
