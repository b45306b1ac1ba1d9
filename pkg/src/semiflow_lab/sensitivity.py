"""First and second variations of the semiflow and what they buy us.

The directional derivative ``psi(t, x, y)`` of the flow solves a linear mild
equation whose coefficient ``D_xP`` is frozen along the base trajectory; the
second variation adds an inhomogeneity built from two first variations.
Both reuse the per-step Picard driver of :mod:`mild_solver`, so the same
stability envelope applies.

On top of the jets this module provides: central finite-difference
cross-checks of the first variation, reconstruction of the orbit's time
derivative from space derivatives via an averaged-Jacobian least-squares
inverse, the smallest singular value of the flow differential restricted to
a tangent frame (in chart coordinates: coefficients of the evolved jets in
the supplied basis), and backward embedding of the semiflow by Newton
iteration in chart coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .errors import (CapabilityError, ConfigError, ConvergenceError,
                     DomainError, EmbeddingError, RankError, SingularityError)
from .manifold import ChartParametrization, chart_project, tangent_basis
from .mild_solver import Nonlinearity, SolveReport, _advance, solve, truncate
from .semigroup import SemigroupSpec
from .state_space import Direction, StateVector, axpy, norm, zeros_like


@dataclass
class SensitivityJet:
    """Flow value plus first (and optionally second) variations at one time."""

    time: float
    base: StateVector
    first: List[Direction]
    second: Optional[List[List[Direction]]]
    directions: List[Direction]


@dataclass
class JetSequence:
    times: np.ndarray
    jets: List[SensitivityJet]
    directions: List[Direction]
    order: int
    base_report: SolveReport
    fine_times: np.ndarray
    fine_base: List[StateVector]
    fine_first: List[List[Direction]]  # [direction][fine index]

    def jet_at(self, t: float) -> SensitivityJet:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * (1.0 + abs(t)):
            raise DomainError(f"no jet stored at t={t}")
        return self.jets[i]


def _fine_sequence(report: SolveReport) -> tuple:
    """Interleave node and midpoint samples of a solve."""
    times, states = [], []
    for j in range(len(report.mid_times)):
        times.append(report.times[j])
        states.append(report.states[j])
        times.append(report.mid_times[j])
        states.append(report.mid_states[j])
    times.append(report.times[-1])
    states.append(report.states[-1])
    return np.asarray(times), states


def _linear_variation(S, P, base_fine, y0, T, n_steps, tol, max_picard,
                      forcing=None):
    """Mild solve of ``d psi = A psi + D_xP(base) psi (+ forcing)``."""
    if P.jacobian_apply is None:
        raise CapabilityError("nonlinearity provides no jacobian_apply")

    def rhs(i, t_abs, v):
        out = P.jacobian_apply(base_fine[i], v, t_abs)
        if forcing is not None:
            out = axpy(1.0, forcing[i], out)
        return out.with_values(out.values, margin_used=v.margin_used)

    times, states, mid_t, mid_s, iters, residual, horizon = _advance(
        S, rhs, y0, T, n_steps, tol, max_picard, None)
    if horizon < T:
        raise ConvergenceError("variational solve stopped early")
    return times, states, mid_t, mid_s


def propagate_jet(S: SemigroupSpec, P: Nonlinearity, x0: StateVector,
                  directions: Sequence[Direction], T: float, order: int = 1,
                  n_steps: int = 100, tol: float = 1e-10,
                  truncation_radius: Optional[float] = None,
                  max_picard: int = 60, seed: int = 0,
                  base_report: Optional[SolveReport] = None) -> JetSequence:
    """Propagate the r-jet (r = 1 or 2) of the semiflow along ``directions``.

    The base trajectory is solved first (or reused via ``base_report``); the
    frozen coefficient ``D_xP(t, F(t,x))`` is sampled at every quadrature
    node.  Initial conditions are exact: first variations start at the
    directions themselves, second variations at zero.
    """
    if order not in (1, 2):
        raise ConfigError("jet order must be 1 or 2")
    if order == 2 and P.hessian_apply is None:
        raise CapabilityError("second-order jets need hessian_apply")
    base = base_report
    if base is None:
        base = solve(S, P, x0, T, n_steps, tol,
                     truncation_radius=truncation_radius, seed=seed,
                     estimate_constants=False)
    if base.horizon < T:
        raise ConvergenceError("base solve left the truncation ball before T")
    fine_t, fine_base = _fine_sequence(base)
    Ptr = truncate(P, base.truncation_radius)

    fine_first = []
    for y in directions:
        _, states, mid_t, mid_s = _linear_variation(
            S, Ptr, fine_base, y, T, n_steps, tol, max_picard)
        seq = _interleave(states, mid_s)
        fine_first.append(seq)

    fine_second = None
    if order == 2:
        fine_second = [[None] * len(directions) for _ in directions]
        for a in range(len(directions)):
            for b in range(len(directions)):
                forcing = [
                    Ptr.hessian_apply(fine_base[i], fine_first[a][i],
                                      fine_first[b][i], fine_t[i])
                    for i in range(len(fine_t))
                ]
                _, states, mid_t, mid_s = _linear_variation(
                    S, Ptr, fine_base, zeros_like(directions[a]), T, n_steps,
                    tol, max_picard, forcing=forcing)
                fine_second[a][b] = _interleave(states, mid_s)

    jets = []
    n_nodes = len(base.times)
    for j in range(n_nodes):
        fi = 2 * j
        first = [fine_first[a][fi] for a in range(len(directions))]
        second = None
        if fine_second is not None:
            second = [[fine_second[a][b][fi] for b in range(len(directions))]
                      for a in range(len(directions))]
        jets.append(SensitivityJet(float(base.times[j]), fine_base[fi],
                                   first, second, list(directions)))
    return JetSequence(base.times, jets, list(directions), order, base,
                       fine_t, fine_base, fine_first)


def _interleave(states, mids):
    seq = []
    for j in range(len(mids)):
        seq.append(states[j])
        seq.append(mids[j])
    seq.append(states[-1])
    return seq


@dataclass
class FdCheckReport:
    best_error: float
    observed_order: float
    eps_ladder: List[float]
    errors: List[float]
    saturated: bool


def fd_check(S: SemigroupSpec, P: Nonlinearity, x0: StateVector, y: Direction,
             t: float, eps_ladder: Sequence[float], n_steps: int = 100,
             tol: float = 1e-10, truncation_radius: Optional[float] = None,
             seed: int = 0) -> FdCheckReport:
    """Compare the first variation against central differences of the flow.

    ``errors[i] = | (Fl(t, x+eps y) - Fl(t, x-eps y)) / (2 eps) - psi(t,x,y) |``
    over the ladder; ``observed_order`` is the least-squares slope of
    log-error against log-eps (about 2 when the quadratic bias dominates).
    When every rung sits at the numerical noise floor the slope carries no
    information and the report is flagged ``saturated``.
    """
    ladder = [float(e) for e in eps_ladder]
    if len(ladder) < 2 or any(e <= 0 for e in ladder):
        raise ConfigError("eps ladder needs >= 2 positive entries")
    K = truncation_radius
    if K is None:
        K = 2.0 * norm(x0) + max(ladder) * norm(y)
    jets = propagate_jet(S, P, x0, [y], t, order=1, n_steps=n_steps, tol=tol,
                         truncation_radius=K, seed=seed)
    psi = jets.jets[-1].first[0]
    errors = []
    for eps in ladder:
        xp = axpy(eps, y, x0)
        xm = axpy(-eps, y, x0)
        fp = solve(S, P, xp, t, n_steps, tol, truncation_radius=K, seed=seed,
                   estimate_constants=False)
        fm = solve(S, P, xm, t, n_steps, tol, truncation_radius=K, seed=seed,
                   estimate_constants=False)
        if fp.horizon < t or fm.horizon < t:
            raise DomainError("x +/- eps y left the solver's ball; shrink eps")
        diff = axpy(-1.0, fm.endpoint, fp.endpoint)
        fd = diff.with_values(diff.values / (2.0 * eps))
        errors.append(norm(axpy(-1.0, psi, fd)))
    floor = 1e-11 * (1.0 + norm(psi))
    saturated = all(e <= floor for e in errors)
    logs = np.log(np.maximum(errors, 1e-300))
    slope = float(np.polyfit(np.log(ladder), logs, 1)[0])
    return FdCheckReport(float(min(errors)), slope, ladder, errors, saturated)


def time_derivative_reconstruct(jets: JetSequence, h: float,
                                cond_max: float = 1e6) -> Direction:
    """Recover ``d/dt Fl(0, z)`` from space derivatives along the orbit.

    Solves ``(int_0^h D_xFl(s, z) ds) v = Fl(h, z) - z`` by least squares on
    the span of the jet's probing directions; the averaged Jacobian columns
    are the time integrals of the first variations (composite Simpson on the
    node/midpoint grid).
    """
    i = int(np.argmin(np.abs(jets.times - h)))
    if abs(jets.times[i] - h) > 1e-9 * (1.0 + h) or i == 0:
        raise DomainError("h must coincide with a positive jet node time")
    fi = 2 * i
    cols = []
    for seq in jets.fine_first:
        vals = np.stack([s.values for s in seq[:fi + 1]])
        cols.append(_simpson_fine(vals, jets.fine_times[:fi + 1]))
    A = np.stack(cols, axis=1)
    scale = np.linalg.norm(A, axis=0)
    if np.any(scale == 0.0):
        raise RankError("a probing direction produced a zero averaged column")
    cond = np.linalg.cond(A / scale)
    if cond > cond_max:
        raise SingularityError(
            "averaged Jacobian too ill-conditioned", condition_number=cond)
    rhs = jets.fine_base[fi].values - jets.fine_base[0].values
    coef, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    out = np.zeros_like(rhs)
    for c, y in zip(coef, jets.directions):
        out += c * y.values
    return jets.fine_base[0].with_values(out)


def time_derivative_residual(jets: JetSequence, h: float, v: Direction) -> float:
    """Defect of the integral identity ``Fl(h,z) - z = (int D_xFl) v``."""
    i = int(np.argmin(np.abs(jets.times - h)))
    fi = 2 * i
    acc = np.zeros(jets.fine_base[0].grid.n_nodes)
    coef = _direction_coefficients(jets.directions, v)
    for c, seq in zip(coef, jets.fine_first):
        vals = np.stack([s.values for s in seq[:fi + 1]])
        acc += c * _simpson_fine(vals, jets.fine_times[:fi + 1])
    lhs = jets.fine_base[fi].values - jets.fine_base[0].values
    return norm(jets.fine_base[0].with_values(lhs - acc))


def _direction_coefficients(directions, v):
    A = np.stack([d.values for d in directions], axis=1)
    coef, *_ = np.linalg.lstsq(A, v.values, rcond=None)
    return coef


def _simpson_fine(vals: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Composite Simpson over an odd-length, evenly spaced fine grid."""
    n = len(times)
    if n == 1:
        return np.zeros(vals.shape[1])
    if n % 2 == 0:
        raise ConfigError("fine grid must have an odd number of samples")
    h = (times[-1] - times[0]) / (n - 1)
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return (h / 3.0) * (w @ vals)


@dataclass
class RestrictedDifferentialReport:
    times: np.ndarray
    sigma_min: np.ndarray
    first_below: Optional[float]
    threshold: float
    gram_condition: float


def restricted_differential_invertibility(
        jets: JetSequence, basis: Sequence[Direction],
        threshold: float = 0.5,
        gram_cond_max: float = 1e8) -> RestrictedDifferentialReport:
    """Smallest singular value of the restricted flow differential.

    The jets must have been propagated along ``basis``.  At each node the
    evolved first variations are expressed in the basis (least-squares
    coefficients, i.e. chart coordinates), and the smallest singular value
    of that coefficient matrix is recorded.  At t=0 the first variations
    equal the directions by construction, so sigma_min(0) is exactly 1.
    """
    B = np.stack([b.values for b in basis], axis=1)
    scale = np.linalg.norm(B, axis=0)
    if np.any(scale == 0.0):
        raise RankError("tangent basis contains a zero direction")
    cond = float(np.linalg.cond(B / scale))
    if cond > gram_cond_max:
        raise RankError(f"tangent basis numerically degenerate (cond={cond:.3g})")
    sigmas = []
    for jet in jets.jets:
        if jet.time == 0.0:
            sigmas.append(1.0)
            continue
        Psi = np.stack([psi.values for psi in jet.first], axis=1)
        C, *_ = np.linalg.lstsq(B, Psi, rcond=None)
        sigmas.append(float(np.linalg.svd(C, compute_uv=False).min()))
    sigmas = np.asarray(sigmas)
    below = np.nonzero(sigmas < threshold)[0]
    first_below = float(jets.times[below[0]]) if below.size else None
    return RestrictedDifferentialReport(jets.times, sigmas, first_below,
                                        threshold, cond)


def backward_embed(S: SemigroupSpec, P: Nonlinearity, y: StateVector,
                   t: float, chart: ChartParametrization,
                   n_steps: int = 60, tol: float = 1e-8,
                   max_newton: int = 25, max_halvings: int = 30,
                   sigma_floor: float = 1e-8, seed: int = 0) -> StateVector:
    """Solve ``Fl(t, z) = y`` for z inside the chart (the backward flow at
    interior points).

    Damped Newton in chart coordinates: the Jacobian columns are first
    variations along the chart's tangent frame.  Iterates are clipped to the
    chart box; when they pin against a boundary face without meeting the
    residual target (no backward continuation exists there) an
    :class:`EmbeddingError` is raised rather than a wrong answer returned.
    """
    if t < 0:
        raise DomainError("embedding time must be >= 0")
    if t == 0.0:
        return y
    target = tol * (1.0 + norm(y))
    u = chart_project(chart, y)
    u = np.clip(u, chart.domain_box[:, 0], chart.domain_box[:, 1])

    def forward(uu):
        z = chart.embed(uu)
        rep = solve(S, P, z, t, n_steps, tol=min(tol * 1e-2, 1e-10),
                    truncation_radius=4.0 * (1.0 + norm(y) + norm(z)),
                    seed=seed, estimate_constants=False)
        if rep.horizon < t:
            raise ConvergenceError("forward leg left the solver ball")
        return z, rep

    z, rep = forward(u)
    G = axpy(-1.0, y, rep.endpoint)
    gnorm = norm(G)
    for _ in range(max_newton):
        if gnorm <= target:
            return z
        frame = tangent_basis(chart, u)
        jets = propagate_jet(S, P, z, frame.directions, t, order=1,
                             n_steps=n_steps, tol=min(tol * 1e-2, 1e-10),
                             truncation_radius=rep.truncation_radius,
                             seed=seed, base_report=rep)
        J = np.stack([psi.values for psi in jets.jets[-1].first], axis=1)
        svals = np.linalg.svd(J / np.linalg.norm(J, axis=0), compute_uv=False)
        if svals.min() < sigma_floor:
            raise EmbeddingError(
                "restricted differential collapsed during Newton iteration",
                residual=gnorm)
        step, *_ = np.linalg.lstsq(J, -G.values, rcond=None)
        improved = False
        alpha = 1.0
        for _ in range(max_halvings):
            u_try = np.clip(u + alpha * step, chart.domain_box[:, 0],
                            chart.domain_box[:, 1])
            z_try, rep_try = forward(u_try)
            G_try = axpy(-1.0, y, rep_try.endpoint)
            if norm(G_try) < gnorm:
                u, z, rep, G, gnorm = u_try, z_try, rep_try, G_try, norm(G_try)
                improved = True
                break
            alpha *= 0.5
        if not improved:
            raise EmbeddingError(
                "Newton stalled (boundary point or no backward continuation)",
                residual=gnorm)
    if gnorm <= target:
        return z
    raise EmbeddingError("Newton did not reach the residual target",
                         residual=gnorm)
