"""Flow-composition charts and the aggregated regularity certificate.

Given the drift ``mu(x) = Ax + P(x)`` and auxiliary fields ``sigma_1..d``
that generate genuine (two-sided) flows, the chart
``alpha(u) = Fl^{sigma_1}_{u_1} o ... o Fl^{sigma_d}_{u_d} o Fl^{mu}_{u_{d+1}}``
parametrizes the candidate manifold around a base point; maximal rank at 0
follows from pointwise linear independence of the fields.  The semiflow
coordinate is kept nonnegative (there is no backward mild flow off the
manifold), so its Jacobian column uses a one-sided difference.

``certify`` aggregates: field independence on a sample of chart points,
drift tangency, invertibility of the restricted differential for small
times, boundary-parallelism of the sigma fields on boundary charts, and the
generator-domain order of sampled points.  Every sub-check carries its own
margin and threshold; the verdict is certified only if all pass.  Sampling
covers the chart box only, and the report says so.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import List, Optional, Sequence

import numpy as np

from .errors import (BlowUpError, ConfigError, ConvergenceError,
                     DegenerateFieldError, DomainError, SemiflowLabError)
from .manifold import (ChartParametrization, TangencyReport, jacobian,
                       nagumo_check, tangent_basis)
from .mild_solver import Nonlinearity, solve
from .semigroup import (DomainOrderEstimate, SemigroupSpec,
                        domain_order_estimate, generator_apply)
from .sensitivity import propagate_jet, restricted_differential_invertibility
from .state_space import StateVector, axpy, norm


@dataclass(eq=False)
class VectorFieldSet:
    """The drift (through its semigroup and reaction term) plus d auxiliary
    fields used as flow generators."""

    semigroup: SemigroupSpec
    P: Nonlinearity
    sigmas: List[Nonlinearity]

    def __post_init__(self):
        if not self.sigmas:
            raise ConfigError("need at least one sigma field")
        for i, s in enumerate(self.sigmas):
            if s.jacobian_apply is None:
                raise ConfigError(f"sigma[{i}] must supply jacobian_apply")

    @property
    def d(self) -> int:
        return len(self.sigmas)

    def mu(self, x: StateVector) -> StateVector:
        return axpy(1.0, generator_apply(self.semigroup, x), self.P.eval(x, 0.0))


def independence_check(fields: VectorFieldSet, x: StateVector) -> float:
    """Smallest singular value of the column-normalized matrix
    ``[mu(x), sigma_1(x), ..., sigma_d(x)]``; 0 iff dependent on the grid."""
    cols = [fields.mu(x)] + [s.eval(x, 0.0) for s in fields.sigmas]
    mat = np.stack([c.values for c in cols], axis=1)
    scales = np.linalg.norm(mat, axis=0)
    if np.any(scales < 1e-300):
        raise DegenerateFieldError("a field vanishes at the sample point")
    return float(np.linalg.svd(mat / scales, compute_uv=False).min())


def sigma_flow(sigma: Nonlinearity, x0: StateVector, t: float,
               n_steps: int = 64, blowup_factor: float = 1e6) -> StateVector:
    """Classical RK4 flow of ``dx/dt = sigma(x)`` for either sign of t."""
    if t == 0.0:
        return x0
    n = max(1, int(n_steps))
    h = t / n
    guard = blowup_factor * (1.0 + norm(x0))
    x = x0
    s = 0.0
    for _ in range(n):
        k1 = sigma.eval(x, s)
        k2 = sigma.eval(axpy(h / 2, k1, x), s + h / 2)
        k3 = sigma.eval(axpy(h / 2, k2, x), s + h / 2)
        k4 = sigma.eval(axpy(h, k3, x), s + h)
        incr = (k1.values + 2 * k2.values + 2 * k3.values + k4.values) / 6.0
        x = x.with_values(x.values + h * incr)
        s += h
        if norm(x) > guard:
            raise BlowUpError(f"sigma flow exceeded the blow-up guard at s={s:.4g}")
    return x


def build_alpha(fields: VectorFieldSet, x0: StateVector, box,
                boundary: bool = False, rank_tol: float = 1e-6,
                sigma_steps: int = 32, mu_steps: int = 16,
                mu_tol: float = 1e-11, seed: int = 0,
                name: str = "alpha") -> ChartParametrization:
    """Chart by flow composition around ``x0``.

    ``box`` has d+1 rows; the last coordinate (the semiflow direction) must
    be nonnegative.  At u=0 the chart returns ``x0`` exactly and its
    Jacobian columns match ``(sigma_1(x0), ..., sigma_d(x0), mu(x0))``.
    """
    box = np.asarray(box, dtype=float)
    d = fields.d
    if box.shape != (d + 1, 2):
        raise ConfigError("parameter box must have d+1 coordinate intervals")
    if box[-1, 0] < 0:
        raise ConfigError("the semiflow coordinate cannot be negative")
    margin = independence_check(fields, x0)
    if margin <= rank_tol:
        raise DegenerateFieldError(
            f"fields dependent at the base point (margin={margin:.3g})")

    def embed(u):
        u = np.asarray(u, dtype=float)
        if np.all(u == 0.0):
            return x0
        z = x0
        t_mu = float(u[d])
        if t_mu < 0:
            raise DomainError("semiflow coordinate must be >= 0")
        if t_mu > 0:
            rep = solve(fields.semigroup, fields.P, z, t_mu,
                        n_steps=mu_steps, tol=mu_tol,
                        truncation_radius=4.0 * (1.0 + norm(x0)),
                        seed=seed, estimate_constants=False)
            if rep.horizon < t_mu:
                raise ConvergenceError(
                    f"mu-leg of alpha left the solver ball (coordinate {d})")
            z = rep.endpoint
        for i in range(d - 1, -1, -1):
            try:
                z = sigma_flow(fields.sigmas[i], z, float(u[i]), sigma_steps)
            except SemiflowLabError as exc:
                raise type(exc)(f"sigma-leg {i} of alpha failed: {exc}") from exc
        return z

    return ChartParametrization(d + 1, boundary, box, embed, name=name,
                                hard_lower_last=True)


@dataclass
class SubCheck:
    name: str
    margin: float
    threshold: float
    passed: bool
    direction: str = "above"  # margin must be above/below the threshold


@dataclass
class CertifyThresholds:
    rank_tol: float = 1e-6
    tangency_tol: float = 1e-3
    order_ratio_bound: float = 0.75
    sigma_min_tol: float = 0.5
    k_max: int = 3
    t_probe: float = 0.1
    order_ladder: Sequence[float] = (0.2, 0.1, 0.05, 0.025)


@dataclass
class RegularityReport:
    independence_margin: float
    alpha_rank_margin: float
    tangency: List[TangencyReport]
    boundary_sigma_parallel: Optional[float]
    domain_orders: List[DomainOrderEstimate]
    sigma_min_curve: np.ndarray
    sigma_min_times: np.ndarray
    checks: List[SubCheck]
    verdict: str
    sampled_region: str = "chart_box"

    @property
    def certified(self) -> bool:
        return self.verdict == "certified"


def _sample_params(chart: ChartParametrization, max_corners: int = 4):
    """Box center plus up to four corners pulled halfway toward it."""
    c = chart.center
    samples = [c]
    corners = list(product(*[(lo, hi) for lo, hi in chart.domain_box]))
    for v in corners[:max_corners]:
        samples.append(c + 0.5 * (np.asarray(v) - c))
    return samples


def certify(fields: VectorFieldSet, chart: Optional[ChartParametrization] = None,
            x0: Optional[StateVector] = None,
            thresholds: Optional[CertifyThresholds] = None,
            jet_steps: int = 20, solver_tol: float = 1e-10,
            seed: int = 0, alpha_box_radius: float = 0.05) -> RegularityReport:
    """Run every regularity sub-check and aggregate the verdict.

    Sub-check failures are recorded in the report; only infrastructure
    failures (solver divergence and the like) raise.
    """
    th = thresholds or CertifyThresholds()
    S, P = fields.semigroup, fields.P
    if chart is None:
        if x0 is None:
            raise ConfigError("certify needs a chart or a base point")
        d = fields.d
        box = [[-alpha_box_radius, alpha_box_radius]] * d + [[0.0, alpha_box_radius]]
        chart = build_alpha(fields, x0, box, rank_tol=th.rank_tol, seed=seed)

    samples = _sample_params(chart)
    margins = [independence_check(fields, chart.embed(u)) for u in samples]
    independence_margin = float(min(margins))

    jc = jacobian(chart, chart.center)
    alpha_rank_margin = float(
        np.linalg.svd(jc / np.linalg.norm(jc, axis=0), compute_uv=False).min())

    tangency = [nagumo_check(chart, u, S, P, th.tangency_tol) for u in samples]
    worst_tangency = max(r.residual for r in tangency)
    tangency_ok = all(r.verdict != "violating" for r in tangency)

    ladder = list(th.order_ladder)
    if S.kind == "shift":
        while ladder[0] * th.k_max > S.grid.extension_margin:
            ladder = [h / 2 for h in ladder]
    domain_orders = [
        domain_order_estimate(S, chart.embed(u), th.k_max, ladder,
                              th.order_ratio_bound)
        for u in samples
    ]
    min_order = min(e.order_passed for e in domain_orders)

    center = chart.center
    frame = tangent_basis(chart, center)
    jets = propagate_jet(S, P, chart.embed(center), frame.directions,
                         th.t_probe, order=1, n_steps=jet_steps,
                         tol=solver_tol, seed=seed)
    rd = restricted_differential_invertibility(jets, frame.directions,
                                               threshold=th.sigma_min_tol)
    sigma_min_min = float(rd.sigma_min.min())

    boundary_parallel = None
    if chart.boundary_flag:
        face = [u.copy() for u in samples]
        for u in face:
            u[-1] = 0.0
        worst = 0.0
        for u in face:
            x = chart.embed(u)
            fr = tangent_basis(chart, u)
            J = np.stack([d_.values for d_ in fr.directions], axis=1)
            for s_field in fields.sigmas:
                sx = s_field.eval(x, 0.0)
                coef, *_ = np.linalg.lstsq(J, sx.values, rcond=None)
                normal = abs(coef[-1]) * np.linalg.norm(J[:, -1])
                worst = max(worst, normal / max(np.linalg.norm(sx.values), 1e-12))
        boundary_parallel = float(worst)

    checks = [
        SubCheck("independence", independence_margin, th.rank_tol,
                 independence_margin > th.rank_tol),
        SubCheck("alpha_rank", alpha_rank_margin, th.rank_tol,
                 alpha_rank_margin > th.rank_tol),
        SubCheck("tangency", worst_tangency, th.tangency_tol,
                 tangency_ok, direction="below"),
        SubCheck("restricted_differential", sigma_min_min, th.sigma_min_tol,
                 sigma_min_min >= th.sigma_min_tol),
        SubCheck("domain_order", float(min_order), float(th.k_max),
                 min_order >= th.k_max),
    ]
    if boundary_parallel is not None:
        checks.append(SubCheck("boundary_sigma_parallel", boundary_parallel,
                               th.tangency_tol,
                               boundary_parallel <= th.tangency_tol,
                               direction="below"))
    failures = [c.name for c in checks if not c.passed]
    verdict = "certified" if not failures else "failed(" + ",".join(failures) + ")"
    return RegularityReport(independence_margin, alpha_rank_margin, tangency,
                            boundary_parallel, domain_orders, rd.sigma_min,
                            rd.times, checks, verdict)
