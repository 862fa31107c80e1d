import logging
import math
from typing import Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp, trapezoid
from scipy.special import logsumexp

from dampwave.core.config import settings
from dampwave.core.errors import GridMismatchError, TableCoverageError
from dampwave.models.potential import GrowthReport, OrderStudy, PhiTable, PotentialParams, PsiMassSeries
from dampwave.models.wave import Field, WaveState

logger = logging.getLogger(__name__)

# phi is kept in log form past this value; e^709 is the float64 ceiling
LOG_SWITCH = math.log(1e300) + math.log(1e-10)
MAX_DR = 1e-3
MIN_GROWTH_RADIUS = 20.0


def damping(x, mu0: float) -> np.ndarray:
    """V(x) = mu0 (1+x^2)^{-1/2}; mu0 = 0 is allowed for the free wave"""
    return mu0 / np.hypot(1.0, x)


def _rk4_step_matrices(mu0: float, r0: np.ndarray, dr: float) -> np.ndarray:
    """Classical RK4 one-step propagators for y' = [[0,1],[1+V,0]] y, one per start node"""
    n = r0.shape[0]

    def system(r):
        A = np.zeros((n, 2, 2))
        A[:, 0, 1] = 1.0
        A[:, 1, 0] = 1.0 + damping(r, mu0)
        return A

    A0, Ah, A1 = system(r0), system(r0 + 0.5 * dr), system(r0 + dr)
    eye = np.broadcast_to(np.eye(2), (n, 2, 2))
    K1 = A0
    K2 = Ah @ (eye + 0.5 * dr * K1)
    K3 = Ah @ (eye + 0.5 * dr * K2)
    K4 = A1 @ (eye + dr * K3)
    return eye + (dr / 6.0) * (K1 + 2.0 * K2 + 2.0 * K3 + K4)


def _prefix_products(M: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Inclusive scan P[i] = M[i] @ ... @ M[0], each kept as (normalised matrix, log scale)"""
    P = M.copy()
    scale = np.abs(P).max(axis=(1, 2))
    P /= scale[:, None, None]
    log_scale = np.log(scale)
    offset = 1
    while offset < P.shape[0]:
        combined = P[offset:] @ P[:-offset]
        combined_log = log_scale[offset:] + log_scale[:-offset]
        norm = np.abs(combined).max(axis=(1, 2))
        P[offset:] = combined / norm[:, None, None]
        log_scale[offset:] = combined_log + np.log(norm)
        offset *= 2
    return P, log_scale


def _integrate(mu0: float, steps: int, dr: float, chunk: int) -> Tuple[np.ndarray, np.ndarray]:
    """log phi and phi'/phi at nodes 0..steps by RK4, scanned chunk by chunk.

    The carried state y is stored normalised with a running log scale, so the
    table never overflows regardless of r_max.
    """
    log_values = np.zeros(steps + 1)
    ratios = np.zeros(steps + 1)
    y = np.array([1.0, 0.0])
    y_log = 0.0
    for start in range(0, steps, chunk):
        stop = min(start + chunk, steps)
        M = _rk4_step_matrices(mu0, np.arange(start, stop) * dr, dr)
        P, log_scale = _prefix_products(M)
        Y = P @ y
        log_values[start + 1:stop + 1] = y_log + log_scale + np.log(Y[:, 0])
        ratios[start + 1:stop + 1] = Y[:, 1] / Y[:, 0]
        last = np.abs(Y[-1]).max()
        y = Y[-1] / last
        y_log += log_scale[-1] + math.log(last)
    return log_values, ratios


class PotentialService:
    def eval_potential(self, x, params: PotentialParams):
        """Damping potential at x (scalar or array)"""
        return damping(x, params.mu0)

    def solve_phi(self, params: PotentialParams, r_max: float, dr: float = 1e-4) -> PhiTable:
        """Tabulate phi on [0, r_max] with step dr"""
        if r_max <= 0:
            raise ValueError(f"r_max must be positive, got {r_max}")
        if dr <= 0:
            raise ValueError(f"dr must be positive, got {dr}")
        if dr > MAX_DR:
            raise ValueError(f"dr must not exceed {MAX_DR}, got {dr}")

        steps = int(math.ceil(r_max / dr - 1e-9))
        log_values, ratios = _integrate(params.mu0, steps, dr, settings.phi_chunk)

        above = np.flatnonzero(log_values > LOG_SWITCH)
        switch_index = int(above[0]) if above.size else None
        raw_end = switch_index if switch_index is not None else steps + 1
        values = np.full(steps + 1, np.nan)
        values[:raw_end] = np.exp(log_values[:raw_end])
        derivs = np.full(steps + 1, np.nan)
        derivs[:raw_end] = ratios[:raw_end] * values[:raw_end]
        if switch_index is not None:
            logger.info(f"phi table switched to log form at r={switch_index * dr:.3f}")

        logger.debug(f"Solved phi for mu0={params.mu0} on [0, {steps * dr}] with {steps + 1} nodes")
        return PhiTable(mu0=params.mu0, dr=dr, r_max=steps * dr, values=values, derivs=derivs,
                        log_values=log_values, ratios=ratios, switch_index=switch_index)

    def phi_reference(self, params: PotentialParams, r: float) -> Tuple[float, float]:
        """Independent (phi(r), phi'(r)) from an adaptive 8th-order integrator"""
        if r == 0:
            return 1.0, 0.0

        def rhs(s, y):
            return [y[1], (1.0 + damping(s, params.mu0)) * y[0]]

        solution = solve_ivp(rhs, (0.0, r), [1.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-14)
        if not solution.success:
            raise RuntimeError(f"reference integration failed: {solution.message}")
        return float(solution.y[0, -1]), float(solution.y[1, -1])

    def ode_residual(self, table: PhiTable) -> np.ndarray:
        """|phi'' - (1+V) phi| / max(1, phi) at interior nodes, phi'' by central differencing of phi'"""
        L = table.log_values
        w = table.ratios
        # phi'(r_{k+-1}) / phi(r_k) stays finite in log form
        ahead = w[2:] * np.exp(L[2:] - L[1:-1])
        behind = w[:-2] * np.exp(L[:-2] - L[1:-1])
        second = (ahead - behind) / (2.0 * table.dr)
        residual = np.abs(second - (1.0 + damping(table.r[1:-1], table.mu0)))
        # phi >= 1, so max(1, phi) = phi and the residual is already relative
        return residual

    def check_phi_growth(self, table: PhiTable) -> GrowthReport:
        """Envelope phi(r) e^{-r} (1+r)^{-mu0/2} over the whole table"""
        if table.r_max < MIN_GROWTH_RADIUS:
            raise TableCoverageError(f"growth check needs r_max >= {MIN_GROWTH_RADIUS}, table ends at {table.r_max}")
        r = table.r
        rho = np.exp(table.log_values - r - 0.5 * table.mu0 * np.log1p(r))
        k = int(np.argmax(rho))
        return GrowthReport(mu0=table.mu0, r=r, rho=rho, rho0=float(rho[0]), sup=float(rho[k]),
                            argsup=float(r[k]), max_residual=float(self.ode_residual(table).max()))

    def psi_mass(self, table: PhiTable, t: float, R0: float) -> float:
        """e^{-t} times the integral of phi over |x| <= R0 + t"""
        if t < 0:
            raise ValueError(f"t must be nonnegative, got {t}")
        if R0 <= 0:
            raise ValueError(f"R0 must be positive, got {R0}")
        b = R0 + t
        if not table.covers(b):
            raise TableCoverageError(f"psi mass at t={t} needs r_max >= {b}, table ends at {table.r_max}")

        dr = table.dr
        k = min(int(math.floor(b / dr + 1e-9)), table.size - 1)
        delta = max(b - k * dr, 0.0)
        logs = [table.log_values[:k + 1]]
        weights = np.full(k + 1, dr)
        weights[0] = weights[-1] = 0.5 * dr
        if k == 0:
            weights[0] = 0.0
        weight_list = [weights]
        if delta > 0 and k + 1 < table.size:
            # partial cell [r_k, b], phi(b) from the log-linear interpolant
            log_end = table.log_values[k] + (delta / dr) * (table.log_values[k + 1] - table.log_values[k])
            logs.append(np.array([table.log_values[k], log_end]))
            weight_list.append(np.array([0.5 * delta, 0.5 * delta]))
        log_integral = logsumexp(np.concatenate(logs), b=np.concatenate(weight_list))
        return float(np.exp(math.log(2.0) - t + log_integral))

    def psi_mass_series(self, table: PhiTable, times: Iterable[float], R0: float) -> PsiMassSeries:
        times = [float(t) for t in times]
        exponent = 0.5 * table.mu0
        masses = [self.psi_mass(table, t, R0) for t in times]
        ratios = [m / (1.0 + t) ** exponent for m, t in zip(masses, times)]
        reference: Optional[float] = None
        if table.covers(R0 + 10.0):
            reference = self.psi_mass(table, 10.0, R0) / 11.0 ** exponent
        return PsiMassSeries(mu0=table.mu0, R0=R0, times=times, masses=masses, ratios=ratios,
                             max_ratio=max(ratios), reference=reference)

    def check_sign_condition(self, u0: Field, u1: Field, table: PhiTable) -> float:
        """Integral of (u0'' + u1) phi; positive values certify the blow-up hypothesis"""
        if u0.grid != u1.grid:
            raise GridMismatchError("u0 and u1 are sampled on different grids")
        grid = u0.grid
        if not table.covers(grid.L):
            raise GridMismatchError(f"grid half-width {grid.L} exceeds the phi table (r_max={table.r_max})")
        dx = grid.dx
        u = u0.samples
        u_xx = np.zeros_like(u)
        u_xx[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx**2
        density = u_xx + u1.samples
        support = density != 0.0
        integrand = np.zeros_like(density)
        integrand[support] = density[support] * table.phi_at(grid.x[support])
        return float(trapezoid(integrand, dx=dx))

    def psi_pairing(self, state: WaveState, table: PhiTable) -> float:
        """e^{-t} times the integral of u phi: the solution paired with psi"""
        grid = state.grid
        if not table.covers(grid.L):
            raise GridMismatchError(f"grid half-width {grid.L} exceeds the phi table (r_max={table.r_max})")
        u = state.u.samples
        support = u != 0.0
        if not support.any():
            return 0.0
        x = grid.x[support]
        log_phi = table.log_phi_at(x) - state.t
        integrand = np.zeros_like(u)
        integrand[support] = u[support] * np.exp(log_phi)
        return float(trapezoid(integrand, dx=grid.dx))

    def observed_order(self, params: PotentialParams, r: float, dr: float, halvings: int = 3) -> OrderStudy:
        """Richardson-style order of the RK4 table: phi(r) at dr, dr/2, ... dr/2^halvings"""
        drs = [dr / 2**k for k in range(halvings + 1)]
        values = []
        for h in drs:
            steps = int(round(r / h))
            log_values, _ = _integrate(params.mu0, steps, h, settings.phi_chunk)
            values.append(float(np.exp(log_values[-1])))
        diffs = np.abs(np.diff(values))
        orders = [float(np.log2(diffs[k] / diffs[k + 1])) for k in range(len(diffs) - 1)]
        return OrderStudy(mu0=params.mu0, r=r, drs=drs, values=values, orders=orders)

    def table_frame(self, table: PhiTable):
        """Columns r, phi, dphi, log_phi for CSV export"""
        return pd.DataFrame({"r": table.r, "phi": table.values, "dphi": table.derivs,
                             "log_phi": table.log_values})


potential_service = PotentialService()
