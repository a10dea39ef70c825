import abc
from pathlib import Path
from typing import Any, Optional

from constrained_hj.domain.base import IDomain


class IRepository(abc.ABC):
    def __init__(self, root: Path) -> None:
        self.root = Path(root)

    def path_for(self, name: str, suffix: str) -> Path:
        return self.root / f"{name}{suffix}"

    @abc.abstractmethod
    def add(self, data: IDomain, name: Optional[str] = None) -> Path:
        raise NotImplementedError

    @abc.abstractmethod
    def get(self, name: str) -> Any:
        raise NotImplementedError
