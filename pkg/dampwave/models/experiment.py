import math
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field

from dampwave.models.duhamel import QuadratureRule
from dampwave.models.wave import Grid, InitialProfile, NonlinearityType, Scheme


class ExperimentKind(str, Enum):
    LINEAR_DECAY = "linear_decay"
    PHI_CHECKS = "phi_checks"
    LIFESPAN_SWEEP = "lifespan_sweep"
    CRITICAL_PROBE = "critical_probe"
    PICARD = "picard"
    DISSIPATION = "dissipation"
    SIMULATE = "simulate"


DEFAULT_T_END = {
    ExperimentKind.LINEAR_DECAY: 400.0,
    ExperimentKind.PHI_CHECKS: 0.0,
    ExperimentKind.LIFESPAN_SWEEP: 500.0,
    ExperimentKind.CRITICAL_PROBE: 500.0,
    ExperimentKind.PICARD: 20.0,
    ExperimentKind.DISSIPATION: 2.0,
    ExperimentKind.SIMULATE: 2.0,
}


class ExperimentConfig(BaseModel):
    """Flat description of one experiment; keys are the JSON config keys"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: ExperimentKind
    name: Optional[str] = None  # directory under the output root; defaults to the kind

    # physics
    mu0: float = Field(1.0, ge=0)
    nonlinearity: NonlinearityType = NonlinearityType.NONE
    p: Optional[float] = Field(None, gt=1)
    q: Optional[float] = Field(None, gt=1)
    R0: float = Field(1.0, gt=0)
    profile: InitialProfile = InitialProfile.BUMP
    eps: float = Field(1.0, ge=0)
    u0_weight: float = 1.0
    u1_weight: float = 1.0
    profile_perturbation: float = Field(0.0, ge=0, lt=1)
    seed: int = 0

    # grid and time stepping
    L: Optional[float] = Field(None, gt=0)  # derived from the horizon when omitted
    nx: Optional[int] = Field(None, ge=3)
    dx: float = Field(0.05, gt=0)
    cfl: float = Field(0.9, gt=0)
    scheme: Scheme = Scheme.LEAPFROG
    t_end: Optional[float] = Field(None, ge=0)
    blowup_threshold: float = Field(1e8, gt=0)
    sample_every: float = Field(1.0, gt=0)
    snapshots: int = Field(5, ge=1)

    # energetics
    window_lo: float = Field(20.0, ge=0)
    window_hi: float = Field(400.0, gt=0)
    mu: Optional[float] = Field(None, gt=0)
    refinement_levels: int = Field(2, ge=1)

    # potential
    r_max: float = Field(50.0, gt=0)
    dr: float = Field(1e-4, gt=0)
    psi_t_max: float = Field(100.0, gt=10)

    # lifespan
    eps_max: float = Field(1.0, gt=0)
    eps_ladder: int = Field(8, ge=1)
    eps_ratio: float = Field(math.sqrt(2.0), gt=1)
    max_refinements: int = Field(2, ge=0)

    # picard
    K: int = Field(5, ge=1)
    quad_dt: Optional[float] = Field(None, gt=0)
    quadrature: QuadratureRule = QuadratureRule.LEFT
    s0: float = Field(0.0, ge=0)
    propagation_span: float = Field(200.0, ge=0)

    # dispatch
    output_dir: Optional[Path] = None
    workers: int = Field(1, ge=1)

    @property
    def label(self) -> str:
        return self.name or self.experiment.value

    @property
    def equivalence_time(self) -> float:
        """Twice the time past which the E2 (mu0 <= 1) or E4 (mu0 > 1) bounds apply; 0 without damping"""
        if self.mu0 == 0:
            return 0.0
        if self.mu0 > 1:
            return 2.0 * self.R0 / (self.mu0 - 1.0)
        mu = self.mu if self.mu is not None else self.mu0 * (1.0 - 1e-2)
        if mu >= self.mu0:
            return 0.0
        return 2.0 * mu * self.R0 / (self.mu0 - mu)

    @property
    def horizon(self) -> float:
        """Longest time any run of this experiment reaches"""
        t_end = self.resolved_t_end
        if self.experiment == ExperimentKind.PICARD:
            return max(t_end, self.s0 + self.propagation_span)
        if self.experiment == ExperimentKind.SIMULATE:
            return max(t_end, 2.0 * self.R0)
        if self.experiment == ExperimentKind.DISSIPATION:
            return max(t_end, self.equivalence_time)
        return t_end

    @property
    def resolved_t_end(self) -> float:
        return self.t_end if self.t_end is not None else DEFAULT_T_END[self.experiment]

    def grid(self) -> Grid:
        """Explicit (L, nx) when given, otherwise the smallest grid of spacing dx containing the support cone"""
        if self.nx is not None and self.L is not None:
            return Grid(L=self.L, nx=self.nx)
        if self.L is not None:
            return Grid.with_spacing(self.L, self.dx)
        half = int(math.ceil((self.R0 + self.horizon) / self.dx)) + 5
        return Grid(L=half * self.dx, nx=2 * half + 1)


class Job(BaseModel):
    """One replayable unit of an experiment plan"""

    model_config = ConfigDict(frozen=True)

    index: int
    job_id: str
    task: str
    eps: Optional[float] = None


class JobOutcome(BaseModel):
    job_id: str
    index: int
    ok: bool = True
    error: Optional[str] = None
    artifacts: List[str] = []
    invariants: Dict[str, bool] = {}
    values: Dict[str, Optional[float]] = {}  # headline numbers behind the invariants
    record: Optional[dict] = None  # payload handed to the reduce step


class Manifest(BaseModel):
    experiment: str
    kind: ExperimentKind
    config: dict
    started_at: str
    wall_time: float
    artifacts: List[str]
    invariants: Dict[str, bool]
    failures: Dict[str, str] = {}

    @property
    def passed(self) -> bool:
        return not self.failures and all(self.invariants.values())
