from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from dampwave.models.wave import Grid, InitialProfile, NonlinearityType


class LifespanConfig(BaseModel):
    """Numerical setup shared by every run of a lifespan estimate"""

    model_config = ConfigDict(frozen=True)

    grid: Grid
    cfl: float = Field(0.9, gt=0, le=1)
    t_end: float = Field(500.0, gt=0, description="Censoring budget")
    blowup_threshold: float = Field(1e8, gt=0)
    profile: InitialProfile = InitialProfile.BUMP
    form: NonlinearityType = NonlinearityType.ABS_P
    max_refinements: int = Field(2, ge=0)
    refinement_tol: float = Field(0.02, gt=0)
    u0_weight: float = 1.0
    u1_weight: float = 1.0
    perturbation: float = Field(0.0, ge=0, lt=1)
    seed: int = 0

    @model_validator(mode="after")
    def form_is_time_derivative(self):
        if self.form not in (NonlinearityType.ABS_P, NonlinearityType.SIGNED_P):
            raise ValueError(f"lifespan runs take abs_p or signed_p, got {self.form.value}")
        return self


class LifespanRecord(BaseModel):
    eps: float = Field(..., ge=0)
    p: float = Field(..., gt=1)
    mu0: float = Field(..., gt=0)
    R0: float = Field(..., gt=0)
    form: NonlinearityType = NonlinearityType.ABS_P
    T_num: float = Field(..., gt=0, description="Detected blow-up time, or the budget reached when censored")
    censored: bool = False
    refinement_level: int = Field(0, ge=0)
    converged: bool = False
    level_times: List[float] = []  # T_num at each refinement level
    dx: float = Field(..., gt=0)
    threshold_used: float = Field(..., gt=0)
    sign_integral: float

    @property
    def usable(self) -> bool:
        """Eligible for exponent fits"""
        return not self.censored and self.sign_integral > 0


class LifespanFit(BaseModel):
    """log T_num = intercept + slope log eps over the uncensored records"""

    mu0: float
    p: float
    form: NonlinearityType = NonlinearityType.ABS_P
    slope: float
    intercept: float
    theory_slope: float
    rel_error: float
    r_squared: float
    eps_range: Tuple[float, float]
    points_used: int = Field(..., ge=2)
    exploratory: bool = False
    records: List[LifespanRecord] = []

    @model_validator(mode="after")
    def subcritical_only(self):
        if not self.mu0 * (self.p - 1.0) < 2.0:
            raise ValueError("lifespan fits are defined for mu0 (p-1) < 2 only")
        return self


class CriticalRow(BaseModel):
    eps: float
    log_T: float
    eps_power: float  # eps^-(p-1)


class CriticalProbe(BaseModel):
    """log T_num against eps^-(p-1) at p = 1 + 2/mu0; slope estimates the constant C"""

    mu0: float
    p: float
    rows: List[CriticalRow]
    slope: float
    intercept: float
    r_squared: float
    censored: int = 0
    records: List[LifespanRecord] = []


class ThresholdShift(BaseModel):
    """Relative change of T_num when only the blow-up threshold changes"""

    eps: float
    thresholds: Tuple[float, float]
    times: Tuple[float, float]
    rel_shift: Optional[float] = None  # None if either run was censored
