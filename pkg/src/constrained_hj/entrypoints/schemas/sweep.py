from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from constrained_hj.entrypoints.schemas.model import GridDocument, InitialDocument, RateModelDocument


class GridPolicyDocument(BaseModel):
    lo: List[float]
    hi: List[float]
    h_factor: float = Field(default=0.1, gt=0)
    n_min: int = Field(default=101, ge=5)
    n: Optional[List[int]] = None
    dt: Optional[float] = Field(default=None, gt=0)


class SweepRequest(BaseModel):
    model: RateModelDocument
    initial: InitialDocument
    grid: GridDocument
    dt: float = Field(gt=0, description="time step of the grid limit solver")
    T: float = Field(gt=0)
    t_stars: List[float]
    ladder: Optional[List[float]] = None
    policy: GridPolicyDocument
    form: Optional[Literal["density", "potential"]] = None
    limit_source: Optional[Literal["oracle", "grid"]] = None
    cross_check_limit: bool = False
    workers: Optional[int] = Field(default=None, ge=1)
    probe_radius: float = Field(default=1.0, gt=0)
