from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field as PydanticField, field_validator, model_validator


class Grid(BaseModel):
    """Uniform grid on [-L, L]; nx is odd so that x=0 is a node"""

    model_config = ConfigDict(frozen=True)

    L: float = PydanticField(..., gt=0, description="Half-width of the domain")
    nx: int = PydanticField(..., ge=3)

    @field_validator("nx")
    @classmethod
    def nx_must_be_odd(cls, v):
        if v % 2 == 0:
            raise ValueError("nx must be odd so that x=0 is a grid node")
        return v

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.nx - 1)

    @property
    def x(self) -> np.ndarray:
        return (np.arange(self.nx) - self.nx // 2) * self.dx

    def refined(self, levels: int = 1) -> "Grid":
        """Same domain with dx halved ``levels`` times"""
        return Grid(L=self.L, nx=(self.nx - 1) * 2**levels + 1)

    @classmethod
    def with_spacing(cls, L: float, dx: float) -> "Grid":
        half = int(round(L / dx))
        return cls(L=half * dx, nx=2 * half + 1)


class Field(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    samples: np.ndarray

    @model_validator(mode="after")
    def length_matches_grid(self):
        if self.samples.shape != (self.grid.nx,):
            raise ValueError(f"field has {self.samples.shape} samples, grid has {self.grid.nx} nodes")
        return self

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid=grid, samples=np.zeros(grid.nx))


class WaveState(BaseModel):
    """Snapshot (u, du/dt) at time t.

    ``u_next`` is the leapfrog displacement one step later (taken with step ``dt``);
    ``v`` is then the centred difference of the levels either side of t, and the
    scheme continues from the state without re-bootstrapping.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    grid: Grid
    u: Field
    v: Field
    t: float = PydanticField(0.0, ge=0)
    u_next: Optional[np.ndarray] = None
    dt: Optional[float] = None

    @model_validator(mode="after")
    def fields_share_grid(self):
        if self.u.grid != self.grid or self.v.grid != self.grid:
            raise ValueError("u and v must live on the state's grid")
        if self.u_next is not None and self.u_next.shape != (self.grid.nx,):
            raise ValueError("u_next does not match the grid")
        return self

    @classmethod
    def from_arrays(cls, grid: Grid, u: np.ndarray, v: np.ndarray, t: float,
                    u_next: Optional[np.ndarray] = None, dt: Optional[float] = None) -> "WaveState":
        return cls(grid=grid, u=Field(grid=grid, samples=u), v=Field(grid=grid, samples=v),
                   t=t, u_next=u_next, dt=dt)

    @classmethod
    def initial(cls, u0: Field, u1: Field, t: float = 0.0) -> "WaveState":
        return cls(grid=u0.grid, u=u0, v=u1, t=t)


class NonlinearityType(str, Enum):
    NONE = "none"
    ABS_P = "abs_p"          # |u_t|^p
    SIGNED_P = "signed_p"    # |u_t|^{p-1} u_t
    SPACE_Q = "space_q"      # |u_x|^q
    MIXED = "mixed"          # |u_t|^p |u_x|^q


class Nonlinearity(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: NonlinearityType = NonlinearityType.NONE
    p: Optional[float] = PydanticField(None, gt=1)
    q: Optional[float] = PydanticField(None, gt=1)

    @model_validator(mode="after")
    def exponents_present(self):
        needs_p = self.kind in (NonlinearityType.ABS_P, NonlinearityType.SIGNED_P, NonlinearityType.MIXED)
        needs_q = self.kind in (NonlinearityType.SPACE_Q, NonlinearityType.MIXED)
        if needs_p and self.p is None:
            raise ValueError(f"nonlinearity {self.kind.value} needs exponent p > 1")
        if needs_q and self.q is None:
            raise ValueError(f"nonlinearity {self.kind.value} needs exponent q > 1")
        if not needs_p and self.p is not None:
            raise ValueError(f"nonlinearity {self.kind.value} takes no exponent p")
        if not needs_q and self.q is not None:
            raise ValueError(f"nonlinearity {self.kind.value} takes no exponent q")
        return self

    @property
    def is_linear(self) -> bool:
        return self.kind == NonlinearityType.NONE

    def evaluate(self, ut: np.ndarray, ux: np.ndarray) -> np.ndarray:
        kind = self.kind
        if kind == NonlinearityType.NONE:
            return np.zeros_like(ut)
        if kind == NonlinearityType.ABS_P:
            return np.abs(ut) ** self.p
        if kind == NonlinearityType.SIGNED_P:
            # sgn(0) = 0
            return np.sign(ut) * np.abs(ut) ** self.p
        if kind == NonlinearityType.SPACE_Q:
            return np.abs(ux) ** self.q
        return np.abs(ut) ** self.p * np.abs(ux) ** self.q

    @classmethod
    def none(cls) -> "Nonlinearity":
        return cls()

    @classmethod
    def abs_p(cls, p: float) -> "Nonlinearity":
        return cls(kind=NonlinearityType.ABS_P, p=p)

    @classmethod
    def signed_p(cls, p: float) -> "Nonlinearity":
        return cls(kind=NonlinearityType.SIGNED_P, p=p)


class Scheme(str, Enum):
    LEAPFROG = "leapfrog"
    ORACLE_RK = "oracle_rk"


class InitialProfile(str, Enum):
    BUMP = "bump"
    DOUBLE_BUMP = "double_bump"
    CUSTOM = "custom"


class SolverConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    cfl: float = PydanticField(0.9, gt=0)  # stability needs cfl <= 1; steppers enforce it
    scheme: Scheme = Scheme.LEAPFROG
    t_end: float = PydanticField(..., ge=0)
    blowup_threshold: float = PydanticField(1e8, gt=0)
    mu0: float = PydanticField(..., ge=0)
    nonlinearity: Nonlinearity = Nonlinearity()
    R0: float = PydanticField(1.0, gt=0, description="Support radius of the data at the start of the run")
    oracle_substeps: int = PydanticField(20, ge=1)

    def dt(self, grid: Grid) -> float:
        return self.cfl * grid.dx

    def containment_violations(self, grid: Grid) -> List[str]:
        needed = self.R0 + self.t_end + 4 * grid.dx
        if grid.L < needed:
            return [f"containment: L={grid.L} must be >= R0 + t_end + 4dx = {needed}"]
        return []


class TerminationStatus(str, Enum):
    COMPLETED = "completed"
    BLOWUP_DETECTED = "blowup_detected"


class TerminationReport(BaseModel):
    status: TerminationStatus
    t: float
    steps: int
    max_abs_v: float
    reason: Optional[str] = None

    @property
    def blew_up(self) -> bool:
        return self.status == TerminationStatus.BLOWUP_DETECTED


class ConvergenceStudy(BaseModel):
    """Discrete L2 distance between leapfrog and the oracle at time t, per refinement level"""

    t: float
    dxs: List[float]
    errors: List[float]
    orders: List[float]
