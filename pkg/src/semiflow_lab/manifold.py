"""Parametrized submanifolds with boundary: tangency and lifetime probes.

Manifolds are always written as parametrizations ``u -> embed(u)`` over a
closed coordinate box; when ``boundary_flag`` is set the last coordinate is
constrained to be >= 0 and ``u_n = 0`` models the manifold boundary.  The
tangent space is spanned by the numerical Jacobian columns of the
parametrization, so every geometric statement reduces to least squares on
the grid.

Verdicts are tolerance-qualified by construction: a passing tangency or
lifetime check certifies "consistent with invariance at the stated
tolerance", never absolute invariance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError, OffManifoldError, RankError
from .mild_solver import Nonlinearity, solve
from .semigroup import SemigroupSpec, generator_apply
from .state_space import Direction, StateVector, axpy, norm

_BOUNDARY_EPS = 1e-12


@dataclass(eq=False)
class ChartParametrization:
    """Map from a coordinate box into state space with a numerical Jacobian.

    ``fd_steps`` are the per-coordinate central-difference steps (one-sided
    second-order differences are substituted at box edges, which is also how
    the semiflow coordinate of composed-flow charts is handled at 0).
    """

    param_dim: int
    boundary_flag: bool
    domain_box: np.ndarray  # shape (n, 2)
    embed: Callable[[np.ndarray], StateVector]
    fd_steps: Optional[np.ndarray] = None
    name: str = "chart"
    rank_tol: float = 1e-6
    #: the last coordinate's lower bound is a hard domain limit of ``embed``
    #: (semiflow time cannot run backwards), not just a chart edge
    hard_lower_last: bool = False

    def __post_init__(self):
        box = np.asarray(self.domain_box, dtype=float)
        if box.shape != (self.param_dim, 2):
            raise ConfigError("domain_box must have shape (param_dim, 2)")
        if np.any(box[:, 1] <= box[:, 0]):
            raise ConfigError("domain_box intervals must be nondegenerate")
        if self.boundary_flag and box[-1, 0] != 0.0:
            raise ConfigError(
                "boundary charts require the last interval to start at 0")
        self.domain_box = box
        if self.fd_steps is None:
            self.fd_steps = 1e-5 * (box[:, 1] - box[:, 0])
        else:
            self.fd_steps = np.asarray(self.fd_steps, dtype=float)
            if self.fd_steps.shape != (self.param_dim,):
                raise ConfigError("fd_steps must have one entry per coordinate")
        jc = jacobian(self, self.center)
        sv = np.linalg.svd(jc / np.linalg.norm(jc, axis=0), compute_uv=False)
        if sv.min() <= self.rank_tol:
            raise RankError(
                f"chart Jacobian rank-deficient at the box center "
                f"(sigma_min={sv.min():.3g})")

    @property
    def center(self) -> np.ndarray:
        return self.domain_box.mean(axis=1)

    def contains(self, u: np.ndarray, slack: float = _BOUNDARY_EPS) -> bool:
        u = np.asarray(u, dtype=float)
        width = self.domain_box[:, 1] - self.domain_box[:, 0]
        return bool(np.all(u >= self.domain_box[:, 0] - slack * (1 + width))
                    and np.all(u <= self.domain_box[:, 1] + slack * (1 + width)))

    def on_boundary_face(self, u) -> bool:
        return bool(self.boundary_flag and abs(float(np.asarray(u)[-1])) <= _BOUNDARY_EPS)


def jacobian(chart: ChartParametrization, u) -> np.ndarray:
    """Numerical Jacobian columns d embed / d u_i at ``u``.

    Central differences inside the box; quadratic one-sided differences at
    the edges (semiflow coordinates cannot step backwards).
    """
    u = np.asarray(u, dtype=float)
    cols = []
    for i in range(chart.param_dim):
        h = chart.fd_steps[i]
        lo, hi = chart.domain_box[i]
        if u[i] - h >= lo and u[i] + h <= hi:
            up = u.copy(); up[i] += h
            um = u.copy(); um[i] -= h
            col = (chart.embed(up).values - chart.embed(um).values) / (2 * h)
        else:
            sign = 1.0 if u[i] - h < lo else -1.0
            u1 = u.copy(); u1[i] += sign * h
            u2 = u.copy(); u2[i] += sign * 2 * h
            col = sign * (-3.0 * chart.embed(u).values
                          + 4.0 * chart.embed(u1).values
                          - chart.embed(u2).values) / (2 * h)
        cols.append(col)
    return np.stack(cols, axis=1)


@dataclass
class TangentFrame:
    directions: List[Direction]
    condition: float


def tangent_basis(chart: ChartParametrization, u) -> TangentFrame:
    """Jacobian columns at ``u`` as directions; at boundary points the
    first n-1 columns span the boundary tangent space."""
    if not chart.contains(u, slack=1e-9):
        raise DomainError("parameter point outside the chart box")
    J = jacobian(chart, u)
    scale = np.linalg.norm(J, axis=0)
    if np.any(scale == 0.0):
        raise RankError("degenerate chart: a Jacobian column vanished")
    cond = float(np.linalg.cond(J / scale))
    template = chart.embed(np.asarray(u, dtype=float))
    dirs = [template.with_values(J[:, i], margin_used=0.0)
            for i in range(J.shape[1])]
    return TangentFrame(dirs, cond)


@dataclass
class TangencyReport:
    point_params: np.ndarray
    residual: float
    inward_component: Optional[float]
    verdict: str  # tangent | tangent_inward | violating
    coefficients: np.ndarray
    field_norm: float


def nagumo_check(chart: ChartParametrization, u, S: SemigroupSpec,
                 P: Nonlinearity, tangency_tol: float = 1e-3) -> TangencyReport:
    """Tangency of the drift ``mu(x) = Ax + P(x)`` to the chart at ``u``.

    The residual is the relative distance of mu(x) from the span of the
    tangent frame; at boundary-face points the signed coefficient of the
    boundary-normal column decides inward/outward.
    """
    u = np.asarray(u, dtype=float)
    x = chart.embed(u)
    mu = axpy(1.0, generator_apply(S, x), P.eval(x, 0.0))
    frame = tangent_basis(chart, u)
    J = np.stack([d.values for d in frame.directions], axis=1)
    coef, *_ = np.linalg.lstsq(J, mu.values, rcond=None)
    proj = J @ coef
    mu_norm = float(np.linalg.norm(mu.values))
    floor = 1e-12 * (1.0 + norm(x))
    residual = float(np.linalg.norm(mu.values - proj)) / max(mu_norm, floor)
    inward = None
    if chart.on_boundary_face(u):
        col_scale = float(np.linalg.norm(J[:, -1]))
        inward = float(coef[-1]) * col_scale / max(mu_norm, floor)
    if residual > tangency_tol:
        verdict = "violating"
    elif inward is not None:
        verdict = "tangent_inward" if inward >= -tangency_tol else "violating"
    else:
        verdict = "tangent"
    return TangencyReport(u, residual, inward, verdict, coef, mu_norm)


def chart_project(chart: ChartParametrization, x: StateVector,
                  u0: Optional[np.ndarray] = None, tol: float = 1e-10,
                  max_iter: int = 60) -> np.ndarray:
    """Gauss-Newton projection: minimize ``|embed(u) - x|_2`` over u.

    Returns the unclipped minimizer (callers detect box exits themselves).
    Raises :class:`OffManifoldError` with the last distance when the
    iteration cannot make progress.
    """
    def feasible(uu):
        if chart.hard_lower_last and uu[-1] < chart.domain_box[-1, 0]:
            uu = uu.copy()
            uu[-1] = chart.domain_box[-1, 0]
        return uu

    u = chart.center.copy() if u0 is None else np.asarray(u0, dtype=float).copy()
    u = feasible(u)
    scale = 1.0 + float(np.linalg.norm(x.values))
    r = x.values - chart.embed(u).values
    rnorm = np.linalg.norm(r)
    for _ in range(max_iter):
        J = jacobian(chart, np.clip(u, chart.domain_box[:, 0],
                                    chart.domain_box[:, 1]))
        step, *_ = np.linalg.lstsq(J, r, rcond=None)
        if np.linalg.norm(step) <= tol * (1.0 + np.linalg.norm(u)):
            return feasible(u + step)
        alpha, improved = 1.0, False
        for _ in range(25):
            u_try = feasible(u + alpha * step)
            r_try = x.values - chart.embed(u_try).values
            if np.linalg.norm(r_try) <= rnorm * (1 + 1e-12):
                u, r, rnorm = u_try, r_try, np.linalg.norm(r_try)
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    if rnorm <= tol * scale or np.linalg.norm(step) <= 1e-8 * (1 + np.linalg.norm(u)):
        return u
    raise OffManifoldError("Gauss-Newton projection diverged",
                           distance=float(rnorm))


def off_manifold_distance(chart: ChartParametrization, x: StateVector,
                          u0=None) -> float:
    u = chart_project(chart, x, u0)
    return norm(axpy(-1.0, x, chart.embed(u)))


@dataclass
class LifetimeReport:
    T_exit: float
    exit_kind: str  # interior_ok | left_chart_box | left_tolerance_tube
    times: np.ndarray
    distances: np.ndarray
    params_trace: np.ndarray
    tube_tol: float


def lifetime_estimate(chart: ChartParametrization, u0, S: SemigroupSpec,
                      P: Nonlinearity, T: float, n_steps: int = 100,
                      tol: float = 1e-10, tube_tol: float = 1e-3,
                      seed: int = 0) -> LifetimeReport:
    """First exit time of the semiflow from the chart box or the tolerance
    tube around the manifold.

    The trajectory is integrated from ``embed(u0)`` and projected back to
    chart coordinates at every step node (warm-started).  ``interior_ok``
    means the whole horizon stayed inside box and tube.
    """
    u0 = np.asarray(u0, dtype=float)
    if not chart.contains(u0):
        raise DomainError("u0 outside the chart box")
    x0 = chart.embed(u0)
    rep = solve(S, P, x0, T, n_steps, tol,
                truncation_radius=4.0 * (1.0 + norm(x0)), seed=seed,
                estimate_constants=False)
    times, dists, trace = [], [], []
    u_prev = u0
    for tj, xj in zip(rep.times, rep.states):
        uj = chart_project(chart, xj, u_prev)
        dj = norm(axpy(-1.0, xj, chart.embed(uj)))
        times.append(float(tj))
        dists.append(dj)
        trace.append(uj)
        if dj > tube_tol:
            return LifetimeReport(float(tj), "left_tolerance_tube",
                                  np.asarray(times), np.asarray(dists),
                                  np.asarray(trace), tube_tol)
        if not chart.contains(uj, slack=1e-9):
            return LifetimeReport(float(tj), "left_chart_box",
                                  np.asarray(times), np.asarray(dists),
                                  np.asarray(trace), tube_tol)
        u_prev = uj
    kind = "interior_ok" if rep.horizon >= T else "left_tolerance_tube"
    return LifetimeReport(float(rep.horizon), kind, np.asarray(times),
                          np.asarray(dists), np.asarray(trace), tube_tol)


def linear_chart(offset: StateVector, basis: Sequence[StateVector],
                 domain_box, boundary_flag: bool = False,
                 name: str = "linear_chart") -> ChartParametrization:
    """Affine-in-parameters chart ``u -> offset + sum_i u_i basis_i``."""
    B = np.stack([b.values for b in basis], axis=1)
    grid, kind = offset.grid, offset.norm_kind

    def embed(u):
        u = np.asarray(u, dtype=float)
        return StateVector(grid, offset.values + B @ u, kind)

    return ChartParametrization(len(basis), boundary_flag,
                                np.asarray(domain_box, dtype=float), embed,
                                name=name)
