from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class PotentialParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu0: float = Field(..., gt=0, description="Damping strength of mu0 (1+x^2)^(-1/2)")


class PhiTable(BaseModel):
    """Tabulated even solution of phi'' = (1+V) phi, phi(0)=1, phi'(0)=0.

    ``log_values`` and ``ratios`` (phi'/phi) cover every node. ``values`` and
    ``derivs`` hold the raw representation up to ``switch_index`` and NaN beyond it,
    where phi no longer fits a 64-bit float comfortably.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mu0: float = Field(..., gt=0)
    dr: float = Field(..., gt=0)
    r_max: float = Field(..., gt=0)
    values: np.ndarray
    derivs: np.ndarray
    log_values: np.ndarray
    ratios: np.ndarray
    switch_index: Optional[int] = None

    @model_validator(mode="after")
    def check_shapes(self):
        n = self.log_values.shape[0]
        for name in ("values", "derivs", "ratios"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have {n} entries")
        if n < 2:
            raise ValueError("table needs at least two nodes")
        for array in (self.values, self.derivs, self.log_values, self.ratios):
            array.flags.writeable = False
        return self

    @property
    def size(self) -> int:
        return self.log_values.shape[0]

    @property
    def r(self) -> np.ndarray:
        return np.arange(self.size) * self.dr

    def covers(self, radius: float) -> bool:
        return radius <= self.r_max * (1 + 1e-12)

    def log_phi_at(self, x) -> np.ndarray:
        """log phi at arbitrary x, using phi(-x) = phi(x)"""
        return np.interp(np.abs(x), self.r, self.log_values)

    def phi_at(self, x) -> np.ndarray:
        with np.errstate(over="ignore"):
            return np.exp(self.log_phi_at(x))


class GrowthReport(BaseModel):
    """Envelope rho(r) = phi(r) e^{-r} (1+r)^{-mu0/2} sampled on the table grid"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    mu0: float
    r: np.ndarray
    rho: np.ndarray
    rho0: float
    sup: float
    argsup: float
    max_residual: float


class PsiMassSeries(BaseModel):
    mu0: float
    R0: float
    times: List[float]
    masses: List[float]
    ratios: List[float]  # mass / (1+t)^{mu0/2}
    max_ratio: float
    reference: Optional[float] = None  # ratio at t=10 when sampled


class OrderStudy(BaseModel):
    """phi(r) under successive halving of dr; orders from successive differences"""

    mu0: float
    r: float
    drs: List[float]
    values: List[float]
    orders: List[float]
