from typing import List, Literal, Optional

from pydantic import BaseModel, Field, model_validator


class PsiDocument(BaseModel):
    kind: Literal["const", "poly"] = "const"
    value: Optional[float] = 1.0
    coefficients: Optional[List[float]] = None


class RateModelDocument(BaseModel):
    a: float
    B: List[List[float]]
    theta: List[float]
    c: float
    psi: PsiDocument = Field(default_factory=PsiDocument)
    kappa: float = 0.0


class GridDocument(BaseModel):
    lo: List[float]
    hi: List[float]
    n: List[int]


class InitialDocument(BaseModel):
    """Quadratic u0 = offset - (x - m0)^T A0 (x - m0), or a tabulated u0 read from a snapshot file."""

    kind: Literal["quadratic", "field"] = "quadratic"
    r: float
    m0: Optional[List[float]] = None
    A0: Optional[List[List[float]]] = None
    offset: float = 0.0
    snapshot: Optional[str] = None

    @model_validator(mode="after")
    def check_kind(self) -> "InitialDocument":
        if self.kind == "quadratic" and (self.m0 is None or self.A0 is None):
            raise ValueError("quadratic initial data needs m0 and A0")
        if self.kind == "field" and not self.snapshot:
            raise ValueError("field initial data needs a snapshot path")
        return self


class ValidateModelRequest(BaseModel):
    model: RateModelDocument
    box_lo: Optional[List[float]] = None
    box_hi: Optional[List[float]] = None
    I_range: Optional[List[float]] = None
    probe_points: Optional[int] = None
    seed: Optional[int] = None
    initial: Optional[InitialDocument] = None
    grid: Optional[GridDocument] = None
