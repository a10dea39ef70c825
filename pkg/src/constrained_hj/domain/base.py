from __future__ import annotations

import abc
from typing import Any, Dict


class IDomain(abc.ABC):
    @abc.abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError
