"""Shipped model instances wiring semigroups, reaction terms and charts.

Four named instances cover the test surface:

``pure_shift``
    Left shift with no reaction term.  The family ``z + w e^{-lam xi}`` is
    closed under shifting, so it ships as the known invariant chart, with a
    constant curve as the auxiliary field.

``riccati_scalar``
    One-dimensional, trivial semigroup, ``P(x) = x^2``.  The flow has the
    closed form ``x0 / (1 - x0 t)``, the workhorse oracle for the solver and
    sensitivity checks.

``diagonal_linear``
    Diagonal semigroup plus a constant-matrix reaction term; second
    variations vanish identically.

``hjm_constant_vol``
    Left shift with the x-independent drift curve ``s0^2 xi`` and the
    constant auxiliary curve ``s0`` (the constant-volatility forward-curve
    model).  Quadratic curves ``z1 + z2 xi + z3 xi^2`` form an invariant
    three-parameter family; the shipped chart uses domain-normalized basis
    curves ``1, xi/L, (xi/L)^2`` to keep the coordinate columns balanced.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import ConfigError
from .manifold import ChartParametrization, linear_chart
from .mild_solver import Nonlinearity
from .semigroup import SemigroupSpec, diagonal_semigroup, shift_semigroup
from .state_space import Grid, StateVector, uniform_grid

CURVE_DOMAIN = (0.0, 3.0)
CURVE_NODES = 121
CURVE_MARGIN = 1.0
MODEL_NAMES = ("pure_shift", "riccati_scalar", "hjm_constant_vol",
               "diagonal_linear")


@dataclass(eq=False)
class ModelInstance:
    name: str
    semigroup: SemigroupSpec
    P: Nonlinearity
    sigmas: List[Nonlinearity]
    x0: StateVector
    known_invariant_chart: Optional[ChartParametrization] = None
    params: Dict = field(default_factory=dict)
    expected: Dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.semigroup.grid


def default_curve_grid() -> Grid:
    return uniform_grid(*CURVE_DOMAIN, CURVE_NODES, CURVE_MARGIN)


def zero_nonlinearity(grid: Grid) -> Nonlinearity:
    z = np.zeros(grid.n_nodes)

    def ev(x, t=0.0):
        return x.with_values(z)

    def jac(x, y, t=0.0):
        return y.with_values(z)

    def hess(x, y1, y2, t=0.0):
        return y1.with_values(z)

    return Nonlinearity(ev, jac, hess, lipschitz_hint=0.0,
                        smoothness_class=99, maps_into_domain_order=99)


def constant_curve_field(grid: Grid, curve_values) -> Nonlinearity:
    """x-independent field: eval returns a fixed curve, derivatives vanish."""
    c = np.asarray(curve_values, dtype=float)
    z = np.zeros(grid.n_nodes)

    def ev(x, t=0.0):
        return x.with_values(c)

    def jac(x, y, t=0.0):
        return y.with_values(z)

    def hess(x, y1, y2, t=0.0):
        return y1.with_values(z)

    return Nonlinearity(ev, jac, hess, lipschitz_hint=0.0,
                        smoothness_class=99, maps_into_domain_order=99)


def componentwise_square(grid: Grid) -> Nonlinearity:
    def ev(x, t=0.0):
        return x.with_values(x.values ** 2)

    def jac(x, y, t=0.0):
        return y.with_values(2.0 * x.values * y.values)

    def hess(x, y1, y2, t=0.0):
        return y1.with_values(2.0 * y1.values * y2.values)

    return Nonlinearity(ev, jac, hess, smoothness_class=99,
                        maps_into_domain_order=99)


def linear_matrix_field(matrix) -> Nonlinearity:
    B = np.asarray(matrix, dtype=float)

    def ev(x, t=0.0):
        return x.with_values(B @ x.values)

    def jac(x, y, t=0.0):
        return y.with_values(B @ y.values)

    def hess(x, y1, y2, t=0.0):
        return y1.with_values(np.zeros_like(y1.values))

    return Nonlinearity(ev, jac, hess, lipschitz_hint=None,
                        smoothness_class=99, maps_into_domain_order=99)


def _merge(defaults: Dict, overrides: Optional[Dict]) -> Dict:
    out = dict(defaults)
    if overrides:
        unknown = set(overrides) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown model params: {sorted(unknown)}")
        out.update(overrides)
    return out


def instantiate(name: str, overrides: Optional[Dict] = None) -> ModelInstance:
    """Build a named model; ``overrides`` replaces individual parameters."""
    if name == "pure_shift":
        p = _merge({"lam": 1.0}, overrides)
        grid = default_curve_grid()
        S = shift_semigroup(grid)
        lam = float(p["lam"])
        one = StateVector(grid, np.ones(grid.n_nodes))
        decay = StateVector(grid, np.exp(-lam * grid.nodes))
        chart = linear_chart(
            StateVector(grid, np.zeros(grid.n_nodes)), [one, decay],
            [[-1.0, 1.0], [0.5, 2.0]], name="quasi_exponential")
        x0 = chart.embed(chart.center)
        return ModelInstance(name, S, zero_nonlinearity(grid),
                             [constant_curve_field(grid, np.ones(grid.n_nodes))],
                             x0, chart, p,
                             expected={"parameter_flow": "(z, w) -> (z, w*exp(-lam t))"})

    if name == "riccati_scalar":
        p = _merge({"x0": 0.5}, overrides)
        S = diagonal_semigroup([0.0])
        grid = S.grid
        x0 = StateVector(grid, [float(p["x0"])])
        return ModelInstance(name, S, componentwise_square(grid),
                             [constant_curve_field(grid, [1.0])], x0, None, p,
                             expected={"closed_form": "x0 / (1 - x0 t)"})

    if name == "diagonal_linear":
        p = _merge({"lambdas": (1.0, 2.0),
                    "matrix": ((0.0, 0.4), (-0.2, 0.1))}, overrides)
        S = diagonal_semigroup(np.asarray(p["lambdas"], dtype=float))
        grid = S.grid
        x0 = StateVector(grid, np.ones(grid.n_nodes))
        return ModelInstance(name, S, linear_matrix_field(p["matrix"]),
                             [constant_curve_field(grid, np.ones(grid.n_nodes))],
                             x0, None, p)

    if name == "hjm_constant_vol":
        p = _merge({"sigma0": 0.1}, overrides)
        grid = default_curve_grid()
        S = shift_semigroup(grid)
        s0 = float(p["sigma0"])
        L = grid.nodes[-1]
        drift = constant_curve_field(grid, s0 ** 2 * grid.nodes)
        sigma = constant_curve_field(grid, s0 * np.ones(grid.n_nodes))
        base = np.array([0.05, 0.01 * L, (s0 ** 2 / 2.0) * L ** 2])
        basis = [StateVector(grid, np.ones(grid.n_nodes)),
                 StateVector(grid, grid.nodes / L),
                 StateVector(grid, (grid.nodes / L) ** 2)]
        offset = StateVector(grid, sum(b * v.values for b, v in zip(base, basis)))
        # wider slope interval: the drift pushes the slope coordinate at rate
        # L*(2 z3 + s0^2) and lifetime runs must stay inside for half a horizon
        chart = linear_chart(offset, basis,
                             [[-0.02, 0.02], [-0.05, 0.05], [-0.02, 0.02]],
                             name="quadratic_forward_curves")
        x0 = chart.embed(chart.center)
        return ModelInstance(name, S, drift, [sigma], x0, chart, p)

    raise ConfigError(f"unknown model {name!r}; choose from {MODEL_NAMES}")


def perturbed_chart(model: ModelInstance, bump: float = 0.1) -> ChartParametrization:
    """The model's invariant chart with a ``bump * xi^2`` offset added.

    The added curve is constant in the parameters, so the tangent spans are
    unchanged while the drift acquires a component the spans cannot absorb;
    tangency and lifetime checks must flag it.
    """
    chart = model.known_invariant_chart
    if chart is None:
        raise ConfigError(f"model {model.name} ships no invariant chart")
    grid = model.grid
    bump_curve = bump * grid.nodes ** 2
    inner = chart.embed

    def embed(u):
        x = inner(u)
        return x.with_values(x.values + bump_curve)

    return ChartParametrization(chart.param_dim, chart.boundary_flag,
                                chart.domain_box.copy(), embed,
                                name=chart.name + "_perturbed")


def model_chart(model: ModelInstance, which: str = "invariant",
                bump: float = 0.1) -> ChartParametrization:
    if which == "invariant":
        if model.known_invariant_chart is None:
            raise ConfigError(f"model {model.name} ships no invariant chart")
        return model.known_invariant_chart
    if which == "perturbed":
        return perturbed_chart(model, bump)
    raise ConfigError(f"unknown chart selector {which!r}")


def smooth_perturbation(model: ModelInstance, scale: float, rng) -> np.ndarray:
    """Random perturbation values adapted to the model's state space.

    Curve models get a few random low-frequency modes (node-wise white noise
    is not a controlled element of the continuum state space: its spline
    blows up under shifting); small coefficient vectors get plain Gaussians.
    """
    n = model.grid.n_nodes
    if model.semigroup.kind == "diagonal":
        return scale * rng.standard_normal(n)
    s = (model.grid.nodes - model.grid.nodes[0]) / (
        model.grid.nodes[-1] - model.grid.nodes[0])
    v = np.zeros(n)
    for k in range(4):
        v += rng.standard_normal() * np.cos(np.pi * k * s)
        v += rng.standard_normal() * np.sin(np.pi * (k + 1) * s)
    return scale * v / max(np.abs(v).max(), 1e-12)


def perturbation_pair(model: ModelInstance, scale: float, rng):
    """Two seeded perturbed copies of the model's base state."""
    xa = model.x0.with_values(model.x0.values
                              + smooth_perturbation(model, scale, rng))
    xb = model.x0.with_values(model.x0.values
                              + smooth_perturbation(model, scale, rng))
    return xa, xb
