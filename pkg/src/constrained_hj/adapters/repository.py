from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

from constrained_hj.domain.base import IDomain
from constrained_hj.domain.grid import GridField
from constrained_hj.domain.results import EpsRunResult
from constrained_hj.domain.trajectory import TrajectoryRecord

from .base import IRepository
from .formats import (
    decode_columns,
    decode_snapshot,
    decode_trajectory,
    dump_json,
    encode_columns,
    encode_eps_series,
    encode_snapshot,
    encode_trajectory,
)


class TrajectoryRepository(IRepository):
    def add(self, data: TrajectoryRecord | EpsRunResult, name: Optional[str] = None) -> Path:
        if isinstance(data, EpsRunResult):
            path = self.path_for(name or f"eps_{data.eps!r}", ".csv")
            path.write_text(encode_eps_series(data), encoding="utf-8")
        else:
            path = self.path_for(name or f"trajectory_{data.source}", ".csv")
            path.write_text(encode_trajectory(data), encoding="utf-8")
        return path

    def get(self, name: str):
        return decode_trajectory(self.path_for(name, ".csv").read_text(encoding="utf-8"))


class SnapshotRepository(IRepository):
    def add(self, data: GridField, name: Optional[str] = None) -> Path:
        name = name or f"snapshot_t{data.t:.6f}"
        path = self.path_for(name, ".bin")
        path.write_bytes(encode_snapshot(data))
        sidecar = {
            "format": "little-endian int64 d, int64 n[d], float64 (lo, hi)[d], float64 t, float64 values (C order)",
            **data.to_dict(),
        }
        self.path_for(name, ".json").write_text(dump_json(sidecar), encoding="utf-8")
        return path

    def add_all(self, fields: Iterable[GridField], prefix: str) -> None:
        for index, field in enumerate(fields):
            self.add(field, f"{prefix}_{index:03d}")

    def get(self, name: str) -> GridField:
        return decode_snapshot(self.path_for(name, ".bin").read_bytes())


class ReportRepository(IRepository):
    def add(self, data: IDomain | Dict[str, Any], name: Optional[str] = None) -> Path:
        payload = data.to_dict() if isinstance(data, IDomain) else data
        path = self.path_for(name or "report", ".json")
        path.write_text(dump_json(payload), encoding="utf-8")
        return path

    def get(self, name: str) -> Dict[str, Any]:
        return json.loads(self.path_for(name, ".json").read_text(encoding="utf-8"))


class PlotDataRepository(IRepository):
    def add(self, data: Sequence[Sequence[float]], name: Optional[str] = None, comment: str = "") -> Path:
        path = self.path_for(name or "plot", ".dat")
        path.write_text(encode_columns(data, comment), encoding="utf-8")
        return path

    def get(self, name: str):
        return decode_columns(self.path_for(name, ".dat").read_text(encoding="utf-8"))
