from enum import Enum
from typing import List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from dampwave.models.wave import Grid


class QuadratureRule(str, Enum):
    LEFT = "left"
    TRAPEZOID = "trapezoid"


class WeightedNorm(BaseModel):
    """sup over samples of (1+t)^(alpha/2) [ |w|/(1+t) + |w_x|_H1 + |w_t|_H1 + |w_tt| ] up to T"""

    value: float = Field(..., ge=0)
    alpha: float = Field(..., gt=0)
    T: float = Field(..., ge=0)


class PicardIterate(BaseModel):
    """One iterate sampled on the quadrature times; rows are times, columns grid nodes.

    ``source`` is the forcing this iterate solves the linear equation with
    (zero for the homogeneous iterate).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: int = Field(..., ge=0)
    times: np.ndarray
    u: np.ndarray
    v: np.ndarray
    source: np.ndarray


class PicardResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    grid: Grid
    T: float
    quad_dt: float
    rule: QuadratureRule
    alpha: float
    norms: List[WeightedNorm]  # X(T) norm of each iterate
    distances: List[WeightedNorm]  # d_k = |iterate k+1 - iterate k|
    ratios: List[Optional[float]]  # d_{k+1} / d_k, None when d_k vanishes
    iterates: List[PicardIterate]

    @property
    def distance_values(self) -> List[float]:
        return [d.value for d in self.distances]


class PropagationRatio(BaseModel):
    """weighted_combo(t) / weighted_combo(s0) divided by ((1+s0)/(1+t))^alpha"""

    s0: float
    alpha: float
    times: List[float]
    ratios: List[float]
    max_ratio: float
