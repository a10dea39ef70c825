from typing import List, Optional

from pydantic import BaseModel, Field

from constrained_hj.entrypoints.schemas.model import GridDocument, InitialDocument, RateModelDocument


class FixedPointRequest(BaseModel):
    model: RateModelDocument
    initial: InitialDocument
    grid: GridDocument
    delta: Optional[float] = Field(default=None, gt=0)
    deltas: List[float] = []
    samples: int = Field(default=51, ge=3)
    k_max: int = Field(default=20, ge=1)
    tol: float = Field(default=1e-9, gt=0)
    radius: Optional[float] = Field(default=None, gt=0)
    n_pairs: int = Field(default=20, ge=1)
    seed: Optional[int] = None
    n_windows: int = Field(default=1, ge=1)
    dt: Optional[float] = Field(default=None, gt=0)


class ResourcePathDocument(BaseModel):
    times: List[float]
    values: List[float]


class ResourcePairDocument(BaseModel):
    first: ResourcePathDocument
    second: ResourcePathDocument


class LipschitzProbeRequest(BaseModel):
    """Explicit resource path pairs, or generated ones: n_pairs seeded pairs at each delta of the ladder."""

    model: RateModelDocument
    initial: InitialDocument
    grid: GridDocument
    pairs: List[ResourcePairDocument] = []
    deltas: List[float] = [0.1, 0.05, 0.025]
    n_pairs: int = Field(default=5, ge=1)
    samples: int = Field(default=21, ge=3)
    seed: Optional[int] = None
    dt: Optional[float] = Field(default=None, gt=0)
    characteristics: bool = True
