from __future__ import annotations

import math
from typing import Iterable, List, Sequence

import numpy as np

from constrained_hj.domain.errors import InvalidArgumentError


class TimeSchedule:
    """Step sequence on [0, T] whose nodes contain every requested mark exactly.

    Each interval between consecutive marks is split into equal steps no longer than dt.
    """

    def __init__(self, T: float, dt: float, marks: Iterable[float] = ()) -> None:
        if not (T > 0 and dt > 0 and math.isfinite(T) and math.isfinite(dt)):
            raise InvalidArgumentError(f"Need T > 0 and dt > 0, got T={T}, dt={dt}")
        inner = sorted({float(mark) for mark in marks if 0.0 < float(mark) < T})
        self.marks = inner + [float(T)]
        times = [0.0]
        start = 0.0
        for mark in self.marks:
            count = max(1, int(math.ceil((mark - start) / dt - 1e-9)))
            step = (mark - start) / count
            times.extend(start + step * k for k in range(1, count))
            times.append(mark)
            start = mark
        self.times = np.asarray(times)
        self.steps = np.diff(self.times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return int(self.steps.shape[0])

    def index_of(self, t: float) -> int:
        index = int(np.argmin(np.abs(self.times - t)))
        return index

    def sample_indices(self, sample_every: int, extra: Sequence[float] = ()) -> List[int]:
        if sample_every < 1:
            raise InvalidArgumentError("sample_every must be >= 1")
        indices = set(range(0, len(self.times), sample_every))
        indices.add(len(self.times) - 1)
        indices.update(self.index_of(t) for t in extra)
        indices.update(self.index_of(t) for t in self.marks)
        return sorted(indices)
