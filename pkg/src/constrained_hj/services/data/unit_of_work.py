from __future__ import annotations

import abc
import logging
import time
from pathlib import Path
from typing import Any, Dict, List, Optional

from constrained_hj.adapters.formats import dump_json
from constrained_hj.adapters.repository import (
    PlotDataRepository,
    ReportRepository,
    SnapshotRepository,
    TrajectoryRepository,
)
from constrained_hj.domain.enums import RunStatus
from constrained_hj.services.config import settings

logger = logging.getLogger(__name__)


class IUoW(abc.ABC):
    def __enter__(self) -> IUoW:
        return self

    def __exit__(self, *args):
        self.rollback()

    @abc.abstractmethod
    def commit(self):
        raise NotImplementedError

    @abc.abstractmethod
    def rollback(self):
        raise NotImplementedError


class RunUoW(IUoW):
    """One run directory; artifacts written inside the block survive, the manifest records the outcome."""

    def __init__(self, output_dir: Optional[str | Path] = None, command: str = "run") -> None:
        self.output_dir = Path(output_dir or settings.CONSTRAINED_HJ_OUTPUT_ROOT)
        self.command = command
        self.committed = False
        self.summary: Dict[str, Any] = {}
        self.errors: List[str] = []

    def __enter__(self) -> RunUoW:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.started_at = time.time()
        self.trajectories = TrajectoryRepository(self.output_dir)
        self.snapshots = SnapshotRepository(self.output_dir)
        self.reports = ReportRepository(self.output_dir)
        self.plots = PlotDataRepository(self.output_dir)
        return super().__enter__()

    def __exit__(self, exc_type, exc, traceback):
        if exc is not None:
            self.errors.append(f"{exc_type.__name__}: {exc}")
        if not self.committed:
            super().__exit__(exc_type, exc, traceback)

    def artifacts(self) -> List[str]:
        return sorted(path.name for path in self.output_dir.iterdir() if path.name != "manifest.json")

    def _write_manifest(self, status: str) -> None:
        manifest = {
            "command": self.command,
            "status": status,
            "started_at": self.started_at,
            "finished_at": time.time(),
            "artifacts": self.artifacts(),
            "summary": self.summary,
            "errors": self.errors,
        }
        (self.output_dir / "manifest.json").write_text(dump_json(manifest), encoding="utf-8")

    def commit(self):
        self._write_manifest(RunStatus.COMPLETE)
        self.committed = True
        logger.info("Run %s committed to %s", self.command, self.output_dir)

    def rollback(self):
        self._write_manifest(RunStatus.PARTIAL)
        logger.warning("Run %s left partial artifacts in %s", self.command, self.output_dir)
