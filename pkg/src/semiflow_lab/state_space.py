"""Discretized state space: grids, curve vectors, norms, interpolation.

States are curves (or plain coefficient vectors) sampled on a fixed grid of
abscissae.  Grids carry an ``extension_margin``: extra domain length on the
right that left-shift operations are allowed to consume.  Every object is
immutable after construction and all operations are pure functions.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError, InvalidStateError, ShapeError

NORM_KINDS = ("sup", "l2_weighted")

#: Relative slack applied to domain / horizon comparisons so that exact
#: endpoints survive floating-point round trips.
_EDGE_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    """Strictly increasing abscissae plus a reserved right extension.

    ``l2_weights`` are the per-node weights of the weighted-l2 norm
    (defaults to unit weights).  At least 4 nodes are required for cubic
    interpolation; smaller grids are legal as plain coefficient indexes
    (diagonal semigroups) but cannot be shifted.
    """

    nodes: np.ndarray
    extension_margin: float = 0.0
    l2_weights: Optional[np.ndarray] = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 1:
            raise ShapeError("grid nodes must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(nodes)):
            raise InvalidStateError("grid nodes must be finite")
        if nodes.size > 1 and not np.all(np.diff(nodes) > 0):
            raise InvalidStateError("grid nodes must be strictly increasing")
        if not (np.isfinite(self.extension_margin) and self.extension_margin >= 0):
            raise InvalidStateError("extension_margin must be finite and >= 0")
        nodes = nodes.copy()
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        if self.l2_weights is not None:
            w = np.asarray(self.l2_weights, dtype=float)
            if w.shape != nodes.shape:
                raise ShapeError("l2_weights must match the node count")
            if not (np.all(np.isfinite(w)) and np.all(w > 0)):
                raise InvalidStateError("l2_weights must be finite and positive")
            w = w.copy()
            w.flags.writeable = False
            object.__setattr__(self, "l2_weights", w)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def right_limit(self) -> float:
        """Right end of the extended domain."""
        return float(self.nodes[-1] + self.extension_margin)

    def compatible(self, other: "Grid") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and np.array_equal(self.nodes, other.nodes)
            and self.extension_margin == other.extension_margin
        )


def uniform_grid(a: float, b: float, n: int, extension_margin: float = 0.0,
                 l2_weights=None) -> Grid:
    return Grid(np.linspace(a, b, n), extension_margin, l2_weights)


@dataclass(frozen=True, eq=False)
class StateVector:
    """One value per grid node, a norm flavour, and the margin bookkeeping.

    ``margin_used`` records how much right-extension data the values already
    consumed (left shifts accumulate it); reports use it to state the
    remaining honest horizon.
    """

    grid: Grid
    values: np.ndarray
    norm_kind: str = "sup"
    margin_used: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.nodes.shape:
            raise ShapeError(
                f"values length {vals.size} != node count {self.grid.n_nodes}")
        if not np.all(np.isfinite(vals)):
            raise InvalidStateError("state values must be finite (no NaN/Inf)")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"unknown norm_kind {self.norm_kind!r}")
        if not (np.isfinite(self.margin_used) and self.margin_used >= 0):
            raise InvalidStateError("margin_used must be finite and >= 0")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @cached_property
    def _spline(self) -> CubicSpline:
        if self.grid.n_nodes < 4:
            raise ConfigError("cubic interpolation needs at least 4 nodes")
        return CubicSpline(self.grid.nodes, self.values, bc_type="not-a-knot")

    def with_values(self, values, margin_used=None) -> "StateVector":
        return StateVector(self.grid, values, self.norm_kind,
                           self.margin_used if margin_used is None else margin_used)


#: Tangent directions share the representation of points.
Direction = StateVector


def state_from_function(grid: Grid, f: Callable[[np.ndarray], np.ndarray],
                        norm_kind: str = "sup") -> StateVector:
    return StateVector(grid, np.asarray(f(grid.nodes), dtype=float), norm_kind)


def zeros_like(x: StateVector) -> StateVector:
    return StateVector(x.grid, np.zeros(x.grid.n_nodes), x.norm_kind, x.margin_used)


def with_margin_used(x: StateVector, margin_used: float) -> StateVector:
    if margin_used == x.margin_used:
        return x
    return dataclasses.replace(x, margin_used=margin_used)


def norm(x: StateVector) -> float:
    """Sup norm or weighted-l2 norm of a state, per its ``norm_kind``."""
    if x.norm_kind == "sup":
        return float(np.max(np.abs(x.values))) if x.values.size else 0.0
    w = x.grid.l2_weights
    if w is None:
        w = 1.0
    return float(np.sqrt(np.sum(w * x.values ** 2)))


def _interp_values(x: StateVector, xis: np.ndarray) -> np.ndarray:
    """Spline values at ``xis``; inside the extension margin the last cubic
    segment is continued (a smooth continuation keeps the semigroup law at
    spline accuracy); DomainError beyond the extended domain."""
    g = x.grid
    xis = np.asarray(xis, dtype=float)
    lo, hi, ext = g.nodes[0], g.nodes[-1], g.right_limit
    slack = _EDGE_SLACK * (1.0 + abs(hi) + g.extension_margin)
    if np.any(xis < lo - slack) or np.any(xis > ext + slack):
        raise DomainError(
            f"abscissa outside extended domain [{lo}, {ext}]")
    return np.asarray(x._spline(np.maximum(xis, lo)), dtype=float)


def interpolate(x: StateVector, xi: float) -> float:
    """Cubic-spline (not-a-knot) value of the curve at ``xi``.

    Exact on polynomials of degree <= 3.  Inside the extension margin the
    last cubic segment is continued; callers that care (the shift
    semigroup) account for the consumed margin via ``margin_used``.
    """
    return float(_interp_values(x, np.asarray([xi]))[0])


def margin_nodes_consumed(x: StateVector, t: float) -> int:
    """How many node evaluations of ``x(. + t)`` fall beyond the last node."""
    return int(np.count_nonzero(x.grid.nodes + t > x.grid.nodes[-1] + _EDGE_SLACK))


def axpy(a: float, x: StateVector, y: StateVector) -> StateVector:
    """Elementwise ``a*x + y`` for states on the same grid."""
    if not x.grid.compatible(y.grid):
        raise ShapeError("axpy operands live on different grids")
    return StateVector(y.grid, a * x.values + y.values, y.norm_kind,
                       max(x.margin_used, y.margin_used))


def write_state_csv(x: StateVector, path) -> None:
    """Serialize as ``xi,value`` rows, 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["xi", "value"])
        for xi, v in zip(x.grid.nodes, x.values):
            writer.writerow([format(xi, ".17g"), format(v, ".17g")])


def read_state_csv(path, extension_margin: float = 0.0,
                   norm_kind: str = "sup") -> StateVector:
    xis, vals = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:2]] != ["xi", "value"]:
            raise ConfigError(f"{path}: expected header 'xi,value'")
        for row in reader:
            if not row:
                continue
            xis.append(float(row[0]))
            vals.append(float(row[1]))
    grid = Grid(np.asarray(xis), extension_margin)
    return StateVector(grid, np.asarray(vals), norm_kind)
