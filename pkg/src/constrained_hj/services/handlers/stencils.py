"""Finite-difference building blocks shared by the grid solvers."""

from __future__ import annotations

import logging
import sys
from typing import List, Tuple

import numpy as np

from constrained_hj.domain.enums import HamiltonianScheme
from constrained_hj.domain.errors import InvalidArgumentError, OutOfDomainError, PeakEscapedDomainError
from constrained_hj.domain.grid import GridField
from constrained_hj.services.config import settings

logging.basicConfig(stream=sys.stdout, level=logging.INFO)
logger = logging.getLogger(__name__)

GHOSTS = 2


def pad_quadratic(values: np.ndarray, axis: int, width: int = GHOSTS) -> np.ndarray:
    """Appends `width` ghost layers per side by extrapolating the quadratic through the three edge nodes."""
    moved = np.moveaxis(values, axis, 0)
    first, second, third = moved[0], moved[1], moved[2]
    last, before_last, before_before = moved[-1], moved[-2], moved[-3]
    left = [3.0 * first - 3.0 * second + third, 6.0 * first - 8.0 * second + 3.0 * third]
    right = [3.0 * last - 3.0 * before_last + before_before, 6.0 * last - 8.0 * before_last + 3.0 * before_before]
    before = np.stack([left[k] for k in reversed(range(width))], axis=0)
    after = np.stack([right[k] for k in range(width)], axis=0)
    return np.moveaxis(np.concatenate([before, moved, after], axis=0), 0, axis)


def one_sided_derivatives(values: np.ndarray, h: float, axis: int, order: int = 2) -> Tuple[np.ndarray, np.ndarray]:
    """Backward/forward derivatives (p-, p+) at every node; order 2 adds the ENO curvature correction."""
    padded = np.moveaxis(pad_quadratic(values, axis), axis, 0)
    n = values.shape[axis]
    diff = np.diff(padded, axis=0) / h
    # diff[j] is the forward difference at padded node j.
    backward = diff[GHOSTS - 1 : GHOSTS - 1 + n]
    forward = diff[GHOSTS : GHOSTS + n]
    if order == 2:
        curvature = np.diff(padded, n=2, axis=0) / (h * h)
        # curvature[j] lives at padded node j + 1.
        left = curvature[GHOSTS - 2 : GHOSTS - 2 + n]
        mid = curvature[GHOSTS - 1 : GHOSTS - 1 + n]
        right = curvature[GHOSTS : GHOSTS + n]
        backward = backward + 0.5 * h * np.where(np.abs(left) <= np.abs(mid), left, mid)
        forward = forward - 0.5 * h * np.where(np.abs(mid) <= np.abs(right), mid, right)
    elif order != 1:
        raise InvalidArgumentError(f"Unsupported derivative order {order}")
    return np.moveaxis(backward, 0, axis), np.moveaxis(forward, 0, axis)


def hamiltonian_rate(values: np.ndarray, h: np.ndarray, scheme: str = HamiltonianScheme.LLF) -> Tuple[np.ndarray, float]:
    """Discrete |grad u|^2 for u_t = |grad u|^2 + ..., and the CFL number per unit dt.

    The CFL number sums (2 max|p| + CONSTRAINED_HJ_CFL_EPSILON) / h over the axes.
    """
    floor = settings.CONSTRAINED_HJ_CFL_EPSILON
    rate = np.zeros_like(values)
    cfl = 0.0
    for axis in range(values.ndim):
        if scheme == HamiltonianScheme.CENTRAL:
            padded = np.moveaxis(pad_quadratic(values, axis), axis, 0)
            n = values.shape[axis]
            slope = (padded[GHOSTS + 1 : GHOSTS + 1 + n] - padded[GHOSTS - 1 : GHOSTS - 1 + n]) / (2.0 * h[axis])
            slope = np.moveaxis(slope, 0, axis)
            rate += slope**2
            speed = 2.0 * float(np.max(np.abs(slope)))
        elif scheme in (HamiltonianScheme.LLF, HamiltonianScheme.LLF1):
            order = 2 if scheme == HamiltonianScheme.LLF else 1
            backward, forward = one_sided_derivatives(values, h[axis], axis, order)
            alpha = 2.0 * np.maximum(np.abs(backward), np.abs(forward))
            rate += (0.5 * (backward + forward)) ** 2 + 0.5 * alpha * (forward - backward)
            speed = float(np.max(alpha))
        else:
            raise InvalidArgumentError(f"Unknown Hamiltonian scheme {scheme!r}")
        cfl += (speed + floor) / h[axis]
    return rate, cfl


def second_differences(values: np.ndarray, h: np.ndarray) -> List[np.ndarray]:
    """Interior centred second differences along each axis."""
    result = []
    for axis in range(values.ndim):
        moved = np.moveaxis(values, axis, 0)
        result.append(np.moveaxis((moved[2:] - 2.0 * moved[1:-1] + moved[:-2]) / h[axis] ** 2, 0, axis))
    return result


def _node_derivatives(values: np.ndarray, index: Tuple[int, ...], h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    d = values.ndim
    gradient = np.zeros(d)
    hessian = np.zeros((d, d))
    for i in range(d):
        step = np.zeros(d, dtype=int)
        step[i] = 1
        plus = values[tuple(np.add(index, step))]
        minus = values[tuple(np.subtract(index, step))]
        gradient[i] = (plus - minus) / (2.0 * h[i])
        hessian[i, i] = (plus - 2.0 * values[index] + minus) / h[i] ** 2
        for j in range(i + 1, d):
            other = np.zeros(d, dtype=int)
            other[j] = 1
            mixed = (
                values[tuple(np.add(np.add(index, step), other))]
                - values[tuple(np.subtract(np.add(index, step), other))]
                - values[tuple(np.add(np.subtract(index, step), other))]
                + values[tuple(np.subtract(np.subtract(index, step), other))]
            ) / (4.0 * h[i] * h[j])
            hessian[i, j] = hessian[j, i] = mixed
    return gradient, hessian


def argmax_u(field: GridField) -> Tuple[np.ndarray, float]:
    """Grid maximum refined by the quadratic through its 3^d stencil; the first maximal index wins ties."""
    index = np.unravel_index(int(np.argmax(field.values)), field.values.shape)
    for axis, position in enumerate(index):
        if position == 0 or position == field.n[axis] - 1:
            raise PeakEscapedDomainError(
                f"Maximum of the field at t={field.t} lies on the boundary along axis {axis}; enlarge the box"
            )
    node = field.node(index)
    peak_value = float(field.values[index])
    gradient, hessian = _node_derivatives(field.values, tuple(int(i) for i in index), field.h)
    if np.any(np.linalg.eigvalsh(hessian) >= 0.0):
        logger.warning("Field is not strictly concave at its maximum (t=%s); returning the grid node", field.t)
        return node, peak_value
    offset = -np.linalg.solve(hessian, gradient)
    offset = np.clip(offset, -field.h, field.h)
    return node + offset, peak_value + 0.5 * float(gradient @ offset)


def hessian_at(field: GridField, x: np.ndarray) -> np.ndarray:
    """D^2 u at x: node Hessians on the 3^d neighbourhood of the nearest node, interpolated quadratically."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError("Hessian location must be finite")
    h = field.h
    nearest = np.rint((x - field.lo) / h).astype(int)
    for axis in range(field.dimension):
        if nearest[axis] < GHOSTS or nearest[axis] > field.n[axis] - 1 - GHOSTS:
            raise OutOfDomainError(f"Hessian stencil at x={x.tolist()} leaves the grid along axis {axis}")
    s = (x - field.node(nearest)) / h
    weights = [np.array([0.5 * si * (si - 1.0), 1.0 - si * si, 0.5 * si * (si + 1.0)]) for si in s]
    hessian = np.zeros((field.dimension, field.dimension))
    for offset in np.ndindex(*([3] * field.dimension)):
        weight = float(np.prod([weights[axis][offset[axis]] for axis in range(field.dimension)]))
        index = tuple(int(nearest[axis] + offset[axis] - 1) for axis in range(field.dimension))
        hessian += weight * _node_derivatives(field.values, index, h)[1]
    return 0.5 * (hessian + hessian.T)


def interior_gradient_hessian(values: np.ndarray, h: np.ndarray) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    """np.gradient-based first and second derivatives on the whole grid (edge_order=2)."""
    spacing = [float(step) for step in h]
    first = np.gradient(values, *spacing, edge_order=2)
    if values.ndim == 1:
        first = [first]
    second = []
    for axis, derivative in enumerate(first):
        nested = np.gradient(derivative, *spacing, edge_order=2)
        if values.ndim == 1:
            nested = [nested]
        second.extend(nested[axis:])
    return list(first), second
