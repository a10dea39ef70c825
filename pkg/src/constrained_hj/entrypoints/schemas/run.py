from typing import List, Literal, Optional

from pydantic import BaseModel, Field

from constrained_hj.entrypoints.schemas.model import GridDocument, InitialDocument, RateModelDocument


class OracleRunRequest(BaseModel):
    model: RateModelDocument
    initial: InitialDocument
    grid: Optional[GridDocument] = None
    T: float = Field(gt=0)
    dt: float = Field(default=1e-3, gt=0)
    sample_every: int = Field(default=1, ge=1)
    adaptive: bool = False
    residual: bool = True


class LimitRunRequest(BaseModel):
    model: RateModelDocument
    initial: InitialDocument
    grid: GridDocument
    T: float = Field(gt=0)
    dt: float = Field(gt=0)
    sample_every: int = Field(default=1, ge=1)
    snapshot_times: List[float] = []
    scheme: Literal["llf", "llf1", "central"] = "llf"
    proj_threshold: Optional[float] = None
    strict: bool = True


class ParabolicRunRequest(BaseModel):
    model: RateModelDocument
    initial: InitialDocument
    grid: GridDocument
    T: float = Field(gt=0)
    eps: Optional[float] = Field(default=None, gt=0)
    dt: Optional[float] = Field(default=None, gt=0)
    form: Optional[Literal["density", "potential"]] = None
    splitting: Literal["lie", "strang"] = "strang"
    sample_every: int = Field(default=1, ge=1)
    snapshot_times: List[float] = []
    probe_depth: float = Field(default=2.0, gt=0)
    cross_check: bool = True
    C_bound: Optional[float] = Field(default=None, ge=0, description="enforce I_eps <= I_M + C_bound eps^2")
