from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator


class EnergyReport(BaseModel):
    """Energy functionals and weighted norms of one WaveState.

    ``weighted_combo`` is |u|^2/(1+t)^2 + |sqrt(V) u|^2/(1+t) + |u_t|^2 + |u_x|^2.
    """

    t: float = Field(..., ge=0)
    E0: float = Field(..., ge=0)
    I_func: float
    F_A: float
    E1: float
    E2: float
    E3: float
    E4: float
    norm_u_L2: float = Field(..., ge=0)
    norm_ux_L2: float = Field(..., ge=0)
    norm_ut_L2: float = Field(..., ge=0)
    norm_sqrtV_u_L2: float = Field(..., ge=0)
    weighted_combo: float = Field(..., ge=0)
    A: float = Field(..., gt=0)
    mu: float = Field(..., gt=0)


class DecayFit(BaseModel):
    """Least-squares fit value ~ c (1+t)^(-slope) over a time window"""

    window: Tuple[float, float]
    slope: float
    intercept: float
    r_squared: float = Field(..., ge=0, le=1)
    points: int = Field(..., ge=2)

    @field_validator("window")
    @classmethod
    def window_must_be_ordered(cls, v):
        if not v[0] < v[1]:
            raise ValueError(f"window must satisfy t_lo < t_hi, got {v}")
        return v


class MonotoneCheck(BaseModel):
    monotone: bool
    A: float
    first_violation: Optional[float] = None  # sample time of the first increase beyond slack
    times: List[float]
    values: List[float]


class EquivalenceBound(BaseModel):
    """functional / weighted_combo must lie in [lower, upper]"""

    functional: str
    ratio: Optional[float] = None  # None when weighted_combo vanishes
    lower: float
    upper: float

    @property
    def holds(self) -> bool:
        return self.ratio is None or self.lower <= self.ratio <= self.upper


class DissipationStudy(BaseModel):
    """Dissipation residual under simultaneous dx, dt halving"""

    dxs: List[float]
    residuals: List[float]
    orders: List[float]

    @model_validator(mode="after")
    def lengths_agree(self):
        if len(self.dxs) != len(self.residuals) or len(self.orders) != max(len(self.dxs) - 1, 0):
            raise ValueError("dxs, residuals and orders do not line up")
        return self
