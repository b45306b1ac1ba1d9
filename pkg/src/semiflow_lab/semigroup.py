"""Concrete strongly continuous semigroups and generator-domain probes.

Two kinds are provided: the left-shift semigroup on curve grids (the
forward-curve setting) and diagonal semigroups ``exp(-lambda_n t)`` on
coefficient vectors.  Both have closed forms, so every downstream solver
statement can be checked against them.

Membership of a point in the domain of the k-th generator power is decided
numerically: the orbit ``t -> S_t x`` is k times differentiable at 0 iff the
forward difference quotients of orders 1..k form a Cauchy sequence along a
step ladder.  The decision statistic is the norm of successive quotient
*differences* (quotient norms alone can converge for non-differentiable
orbits, e.g. a kinked curve under the shift).
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, HorizonError, InvalidStateError, ShapeError
from .state_space import Grid, StateVector, _interp_values, norm

_SLACK = 1e-12


@dataclass(frozen=True, eq=False)
class SemigroupSpec:
    """A shift or diagonal semigroup together with its grid."""

    kind: str
    grid: Grid
    lambdas: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in ("shift", "diagonal"):
            raise ConfigError(f"unknown semigroup kind {self.kind!r}")
        if self.kind == "shift":
            if self.grid.extension_margin <= 0:
                raise ConfigError(
                    "shift semigroup needs extension_margin > 0 "
                    "(shifting consumes domain on the right)")
            if self.grid.n_nodes < 5:
                raise ConfigError("shift semigroup needs at least 5 nodes")
        else:
            lam = np.asarray(self.lambdas, dtype=float)
            if lam.ndim != 1 or lam.size != self.grid.n_nodes:
                raise ShapeError("lambda vector must match the state dimension")
            if not np.all(np.isfinite(lam)):
                raise InvalidStateError("lambda vector must be finite")
            if np.any(lam < 0):
                raise ConfigError("diagonal semigroup needs nonnegative eigenvalues")
            lam = lam.copy()
            lam.flags.writeable = False
            object.__setattr__(self, "lambdas", lam)


def shift_semigroup(grid: Grid) -> SemigroupSpec:
    return SemigroupSpec("shift", grid)


def diagonal_semigroup(lambdas, grid: Optional[Grid] = None) -> SemigroupSpec:
    lam = np.asarray(lambdas, dtype=float)
    if grid is None:
        grid = Grid(np.arange(lam.size, dtype=float))
    return SemigroupSpec("diagonal", grid, lam)


def remaining_horizon(S: SemigroupSpec, x: StateVector) -> float:
    """Margin still available before shift data runs out (inf for diagonal)."""
    if S.kind == "diagonal":
        return float("inf")
    return S.grid.extension_margin - x.margin_used


def apply(S: SemigroupSpec, t: float, x: StateVector) -> StateVector:
    """Evaluate ``S_t x``.

    Shift: ``result(xi) = x(xi + t)`` through the spline, consuming ``t`` of
    the extension margin.  Diagonal: multiplication by ``exp(-lambda t)``.
    ``apply(S, 0, x)`` returns ``x`` unchanged.
    """
    if not S.grid.compatible(x.grid):
        raise ShapeError("state does not live on the semigroup's grid")
    if t < 0:
        raise DomainError("semigroup time must be >= 0 (semigroup, not group)")
    if t == 0.0:
        return x
    if S.kind == "diagonal":
        return StateVector(x.grid, np.exp(-S.lambdas * t) * x.values,
                           x.norm_kind, x.margin_used)
    margin = S.grid.extension_margin
    if x.margin_used + t > margin * (1 + _SLACK) + _SLACK:
        raise HorizonError(
            f"shift by {t} exceeds remaining margin "
            f"{margin - x.margin_used:.6g} of {margin:.6g}")
    vals = _interp_values(x, x.grid.nodes + t)
    return StateVector(x.grid, vals, x.norm_kind, x.margin_used + t)


def fd_weights(stencil: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``
    on an arbitrary stencil (Fornberg's recursion)."""
    n = stencil.size
    if order >= n:
        raise ConfigError("stencil too small for requested derivative order")
    c = np.zeros((n, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = stencil[0] - x0
    for i in range(1, n):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = stencil[i] - x0
        for j in range(i):
            c3 = stencil[i] - stencil[j]
            c2 *= c3
            for k in range(mn, 0, -1):
                c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
            c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


def generator_apply(S: SemigroupSpec, x: StateVector) -> StateVector:
    """Apply the infinitesimal generator.

    Shift: d/dxi via 5-point finite-difference stencils (4th order on
    uniform interiors, one-sided at the edges).  Diagonal: ``-lambda * x``.
    Roughness is not diagnosed here; use :func:`domain_order_estimate`.
    """
    if not S.grid.compatible(x.grid):
        raise ShapeError("state does not live on the semigroup's grid")
    if S.kind == "diagonal":
        return StateVector(x.grid, -S.lambdas * x.values, x.norm_kind, x.margin_used)
    nodes = x.grid.nodes
    m = nodes.size
    out = np.empty(m)
    for i in range(m):
        # one-sided windows lose an order, so widen them by one node
        width = 5 if 2 <= i <= m - 3 else min(6, m)
        lo = min(max(i - 2, 0), m - width)
        w = fd_weights(nodes[lo:lo + width], nodes[i], 1)
        out[i] = w @ x.values[lo:lo + width]
    return StateVector(x.grid, out, x.norm_kind, x.margin_used)


@dataclass
class OrderProfile:
    """Ladder data for one difference-quotient order."""

    quotient_norms: list
    difference_norms: list
    ratios: list
    converged: bool


@dataclass
class DomainOrderEstimate:
    point: StateVector
    max_order_tested: int
    order_passed: int
    divergence_profile: dict  # order -> OrderProfile
    nodes_excluded: int = 0


def domain_order_estimate(S: SemigroupSpec, x: StateVector, k: int,
                          h_ladder: Sequence[float],
                          ratio_bound: float = 0.75,
                          floor_scale: float = 1e-9) -> DomainOrderEstimate:
    """Estimate the largest r <= k with x in the domain of the r-th
    generator power, by convergence of forward difference quotients.

    For each order r the quotients ``h^-r * sum_j (-1)^(r-j) C(r,j) S_{jh} x``
    are formed along the ladder; the order passes when the norms of
    successive quotient differences decay geometrically (ratio below
    ``ratio_bound``) or sit below an absolute floor.

    Shift case: nodes whose stencil reaches past the last grid node read
    margin-continued data, which is only piecewise smooth in t and would
    corrupt the quotients; those nodes are excluded from the norms and their
    count is reported.
    """
    ladder = [float(h) for h in h_ladder]
    if len(ladder) < 3:
        raise ConfigError("step ladder needs at least 3 entries")
    if any(h <= 0 for h in ladder) or any(
            ladder[i + 1] >= ladder[i] for i in range(len(ladder) - 1)):
        raise ConfigError("step ladder must be positive and decreasing")
    if k < 1:
        raise ConfigError("k must be >= 1")
    if S.kind == "shift" and k * ladder[0] + x.margin_used > S.grid.extension_margin + _SLACK:
        raise HorizonError("ladder too coarse: k * max step exceeds the margin")

    profiles = {}
    order_passed = 0
    floor = floor_scale * (1.0 + norm(x))
    excluded = 0
    for r in range(1, k + 1):
        if S.kind == "shift":
            mask = x.grid.nodes + r * ladder[0] <= x.grid.nodes[-1] + _SLACK
            if not np.any(mask):
                raise ConfigError(
                    "ladder too coarse: no stencil fits inside the node range")
            excluded = max(excluded, int(np.count_nonzero(~mask)))
        else:
            mask = slice(None)
        quotients = []
        for h in ladder:
            acc = np.zeros(x.grid.n_nodes)
            for j in range(r + 1):
                xj = apply(S, j * h, x)
                acc += ((-1) ** (r - j)) * comb(r, j) * xj.values
            quotients.append(acc[mask] / h ** r)
        qnorms = [_masked_norm(q, x, mask) for q in quotients]
        diffs = [_masked_norm(quotients[i + 1] - quotients[i], x, mask)
                 for i in range(len(quotients) - 1)]
        ratios = []
        converged = True
        for i in range(len(diffs) - 1):
            if diffs[i + 1] <= floor:
                ratios.append(0.0)
                continue
            ratio = diffs[i + 1] / max(diffs[i], floor)
            ratios.append(ratio)
            if ratio >= ratio_bound:
                converged = False
        profiles[r] = OrderProfile(qnorms, diffs, ratios, converged)
        if converged and order_passed == r - 1:
            order_passed = r
    return DomainOrderEstimate(x, k, order_passed, profiles, excluded)


def _masked_norm(values: np.ndarray, x: StateVector, mask) -> float:
    if x.norm_kind == "sup":
        return float(np.max(np.abs(values))) if values.size else 0.0
    w = x.grid.l2_weights
    w = np.ones(x.grid.n_nodes) if w is None else w
    if not isinstance(mask, slice):
        w = w[mask]
    return float(np.sqrt(np.sum(w * values ** 2)))
