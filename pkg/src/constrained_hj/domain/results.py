from __future__ import annotations

from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .base import IDomain
from .errors import InvalidArgumentError
from .grid import GridField
from .paths import TraitPath


class EpsSample(IDomain):
    def __init__(
        self,
        t: float,
        I: float,
        x: Sequence[float],
        mass: float,
        psi_mass: float,
        mean: Sequence[float],
        second_moment: float,
    ) -> None:
        self.t = float(t)
        self.I = float(I)
        self.x = np.atleast_1d(np.asarray(x, dtype=float))
        self.mass = float(mass)
        self.psi_mass = float(psi_mass)
        self.mean = np.atleast_1d(np.asarray(mean, dtype=float))
        self.second_moment = float(second_moment)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "I": self.I,
            "x": self.x.tolist(),
            "mass": self.mass,
            "psi_mass": self.psi_mass,
            "mean": self.mean.tolist(),
            "second_moment": self.second_moment,
        }


class EpsRunResult(IDomain):
    """Series and u_eps snapshots of one parabolic run at diffusion scale eps."""

    def __init__(self, eps: float, dimension: int) -> None:
        self.eps = float(eps)
        self.dimension = int(dimension)
        self.samples: List[EpsSample] = []
        self.snapshots: List[GridField] = []
        self.metadata: Dict[str, Any] = {}
        self.diagnostics: Dict[str, Any] = {}

    def add(self, sample: EpsSample) -> None:
        if self.samples and sample.t <= self.samples[-1].t:
            raise InvalidArgumentError("EpsRunResult times must increase strictly")
        self.samples.append(sample)

    def times(self) -> np.ndarray:
        return np.array([sample.t for sample in self.samples])

    def resources(self) -> np.ndarray:
        return np.array([sample.I for sample in self.samples])

    def psi_masses(self) -> np.ndarray:
        return np.array([sample.psi_mass for sample in self.samples])

    def traits(self) -> np.ndarray:
        return np.array([sample.x for sample in self.samples]).reshape(len(self.samples), self.dimension)

    def sample_at(self, t: float, tol: float = 1e-9) -> EpsSample:
        for sample in self.samples:
            if abs(sample.t - t) <= tol:
                return sample
        raise InvalidArgumentError(f"No sample recorded at t={t}")

    def snapshot_at(self, t: float, tol: float = 1e-9) -> GridField:
        for field in self.snapshots:
            if abs(field.t - t) <= tol:
                return field
        raise InvalidArgumentError(f"No u_eps snapshot recorded at t={t}")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "samples": len(self.samples),
            "snapshot_times": [field.t for field in self.snapshots],
            "metadata": self.metadata,
            "diagnostics": self.diagnostics,
        }


class SweepEntry(IDomain):
    def __init__(
        self,
        eps: float,
        t_star: float,
        I_error: float,
        x_error: float,
        u_error: float,
        artifact: str,
        signed_I_error: Optional[float] = None,
    ) -> None:
        self.eps = float(eps)
        self.t_star = float(t_star)
        self.I_error = float(I_error)
        self.x_error = float(x_error)
        self.u_error = float(u_error)
        self.artifact = artifact
        self.signed_I_error = None if signed_I_error is None else float(signed_I_error)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "t_star": self.t_star,
            "I_error": self.I_error,
            "signed_I_error": self.signed_I_error,
            "x_error": self.x_error,
            "u_error": self.u_error,
            "artifact": self.artifact,
        }


class SweepReport(IDomain):
    def __init__(self, ladder: Sequence[float], t_stars: Sequence[float]) -> None:
        ladder = [float(eps) for eps in ladder]
        if any(later >= earlier for earlier, later in zip(ladder, ladder[1:])):
            raise InvalidArgumentError("The eps ladder must decrease strictly")
        self.ladder = ladder
        self.t_stars = [float(t) for t in t_stars]
        self.entries: List[SweepEntry] = []
        self.fits: Dict[str, Any] = {}
        self.concentration: Dict[str, Any] = {}
        self.limit_check: Dict[str, Any] = {}
        self.bounds: Dict[str, Any] = {}

    def entries_at(self, t_star: float) -> List[SweepEntry]:
        return [entry for entry in self.entries if abs(entry.t_star - t_star) <= 1e-12]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ladder": self.ladder,
            "t_stars": self.t_stars,
            "entries": [entry.to_dict() for entry in self.entries],
            "fits": self.fits,
            "concentration": self.concentration,
            "limit_check": self.limit_check,
            "bounds": self.bounds,
        }


class FixedPointResult(IDomain):
    def __init__(self, path: TraitPath, distances: Sequence[float], converged: bool) -> None:
        self.path = path
        self.distances = [float(value) for value in distances]
        self.converged = bool(converged)

    @property
    def ratios(self) -> List[float]:
        return [
            later / earlier
            for earlier, later in zip(self.distances, self.distances[1:])
            if earlier > 0.0
        ]

    @property
    def iterations(self) -> int:
        return len(self.distances)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "distances": self.distances,
            "ratios": self.ratios,
            "path": self.path.to_dict(),
        }


class ContractionReport(IDomain):
    def __init__(self, delta: float, ratios: Sequence[float]) -> None:
        self.delta = float(delta)
        self.ratios = [float(value) for value in ratios]

    @property
    def factor(self) -> float:
        return max(self.ratios)

    def to_dict(self) -> Dict[str, Any]:
        return {"delta": self.delta, "factor": self.factor, "ratios": self.ratios}


class TransportResult(IDomain):
    """Difference field r(t_k, .) rebuilt along characteristics; clipped counts extrapolated feet."""

    def __init__(self, times: np.ndarray, values: np.ndarray, clipped: int) -> None:
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        self.clipped = int(clipped)

    def to_dict(self) -> Dict[str, Any]:
        return {"levels": int(self.times.shape[0]), "clipped": self.clipped, "sup": float(np.max(np.abs(self.values)))}


class ConcentrationReport(IDomain):
    def __init__(
        self,
        eps: float,
        t_star: float,
        mass: float,
        mass_error: float,
        mean: Sequence[float],
        mean_error: float,
        second_moment: float,
        I_eps: float,
    ) -> None:
        self.eps = float(eps)
        self.t_star = float(t_star)
        self.mass = float(mass)
        self.mass_error = float(mass_error)
        self.mean = [float(value) for value in mean]
        self.mean_error = float(mean_error)
        self.second_moment = float(second_moment)
        self.I_eps = float(I_eps)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "eps": self.eps,
            "t_star": self.t_star,
            "mass": self.mass,
            "mass_error": self.mass_error,
            "mean": self.mean,
            "mean_error": self.mean_error,
            "second_moment": self.second_moment,
            "I_eps": self.I_eps,
        }
