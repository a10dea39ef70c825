"""Artifact codecs: trajectory CSV, flat little-endian snapshots and JSON documents."""

from __future__ import annotations

import csv
import io
import json
import struct
from typing import Any, Dict, Iterable, List, Sequence, Tuple

import numpy as np

from constrained_hj.domain.errors import InvalidArgumentError
from constrained_hj.domain.grid import GridField
from constrained_hj.domain.results import EpsRunResult
from constrained_hj.domain.trajectory import TrajectoryRecord


def _number(value: float) -> str:
    return repr(float(value))


def trajectory_header(dimension: int) -> List[str]:
    header = ["t"] + [f"m_{axis + 1}" for axis in range(dimension)]
    header += [f"A_{row + 1}{col + 1}" for row, col in zip(*np.triu_indices(dimension))]
    return header + ["I", "rho", "constraint_residual", "R_residual"]


def encode_trajectory(record: TrajectoryRecord) -> str:
    """Rows t, m_1..m_d, upper-triangle A (empty for grid runs), I, rho, residuals."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(trajectory_header(record.dimension))
    entries = record.dimension * (record.dimension + 1) // 2
    rows, cols = np.triu_indices(record.dimension)
    for sample in record.samples:
        if sample.A is None:
            triangle = [""] * entries
        else:
            triangle = [_number(value) for value in sample.A[rows, cols]]
        writer.writerow(
            [_number(sample.t)]
            + [_number(value) for value in sample.xbar]
            + triangle
            + [
                _number(sample.I),
                _number(sample.rho),
                _number(sample.constraint_residual),
                _number(sample.R_residual),
            ]
        )
    return buffer.getvalue()


def decode_trajectory(text: str) -> Dict[str, np.ndarray]:
    reader = csv.DictReader(io.StringIO(text))
    columns: Dict[str, List[float]] = {name: [] for name in reader.fieldnames or []}
    for row in reader:
        for name, value in row.items():
            columns[name].append(float(value) if value != "" else float("nan"))
    return {name: np.asarray(values) for name, values in columns.items()}


def encode_eps_series(result: EpsRunResult) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    d = result.dimension
    writer.writerow(
        ["t", "I_eps"]
        + [f"x_{axis + 1}" for axis in range(d)]
        + ["mass", "psi_mass"]
        + [f"mean_{axis + 1}" for axis in range(d)]
        + ["second_moment"]
    )
    for sample in result.samples:
        writer.writerow(
            [_number(sample.t), _number(sample.I)]
            + [_number(value) for value in sample.x]
            + [_number(sample.mass), _number(sample.psi_mass)]
            + [_number(value) for value in sample.mean]
            + [_number(sample.second_moment)]
        )
    return buffer.getvalue()


def encode_snapshot(field: GridField) -> bytes:
    """int64 d, int64 n per axis, float64 lo/hi per axis, float64 t, float64 values in C order."""
    d = field.dimension
    header = struct.pack(f"<q{d}q", d, *field.n)
    bounds = struct.pack(f"<{2 * d}d", *[value for pair in zip(field.lo, field.hi) for value in pair])
    stamp = struct.pack("<d", field.t)
    body = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    return header + bounds + stamp + body


def decode_snapshot(payload: bytes) -> GridField:
    if len(payload) < 8:
        raise InvalidArgumentError("Snapshot payload is truncated")
    (d,) = struct.unpack_from("<q", payload, 0)
    if d not in (1, 2):
        raise InvalidArgumentError(f"Snapshot dimension {d} is not supported")
    offset = 8
    if len(payload) < offset + 24 * d + 8:
        raise InvalidArgumentError("Snapshot header is truncated")
    n = struct.unpack_from(f"<{d}q", payload, offset)
    offset += 8 * d
    bounds = struct.unpack_from(f"<{2 * d}d", payload, offset)
    offset += 16 * d
    (t,) = struct.unpack_from("<d", payload, offset)
    offset += 8
    values = np.frombuffer(payload, dtype="<f8", offset=offset)
    if values.size != int(np.prod(n)):
        raise InvalidArgumentError("Snapshot payload is truncated")
    return GridField(bounds[0::2], bounds[1::2], n, values.reshape(n).astype(float), t)


def dump_json(payload: Any) -> str:
    return json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"


def _json_default(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "to_dict"):
        return value.to_dict()
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def encode_columns(columns: Sequence[Iterable[float]], comment: str = "") -> str:
    lines = [f"# {comment}"] if comment else []
    for row in zip(*columns):
        lines.append(" ".join(_number(value) for value in row))
    return "\n".join(lines) + "\n"


def decode_columns(text: str) -> Tuple[np.ndarray, ...]:
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    data = np.array(rows, dtype=float)
    return tuple(data[:, column] for column in range(data.shape[1]))
