import numpy as np
import pytest

import semiflow_lab as sl
from semiflow_lab.errors import CapabilityError, DomainError, EmbeddingError
from semiflow_lab.models import zero_nonlinearity

from conftest import riccati_exact


def unit_dir(model):
    return model.x0.with_values(np.ones(model.grid.n_nodes), margin_used=0.0)


class TestPropagateJet:
    def test_zero_reaction_first_variation_is_orbit(self, pure_shift):
        y = sl.state_from_function(pure_shift.grid, lambda s: np.exp(-s))
        jets = sl.propagate_jet(pure_shift.semigroup, pure_shift.P,
                                pure_shift.x0, [y], 0.4, order=2,
                                n_steps=20, tol=1e-11)
        for jet in jets.jets:
            orbit = sl.apply(pure_shift.semigroup, jet.time, y)
            assert sl.norm(sl.axpy(-1.0, orbit, jet.first[0])) <= 1e-10
            assert sl.norm(jet.second[0][0]) == 0.0

    def test_linear_reaction_second_variation_vanishes(self, diagonal_linear):
        dirs = [diagonal_linear.x0.with_values([1.0, 0.0]),
                diagonal_linear.x0.with_values([0.0, 1.0])]
        jets = sl.propagate_jet(diagonal_linear.semigroup, diagonal_linear.P,
                                diagonal_linear.x0, dirs, 0.5, order=2,
                                n_steps=40, tol=1e-11)
        worst = max(sl.norm(jet.second[a][b]) for jet in jets.jets
                    for a in range(2) for b in range(2))
        assert worst <= 1e-9

    def test_initial_conditions_exact(self, riccati):
        y = riccati.x0.with_values([0.7])
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.3, order=2, n_steps=10, tol=1e-11)
        j0 = jets.jets[0]
        assert j0.first[0] is y
        assert sl.norm(j0.second[0][0]) == 0.0

    def test_riccati_first_variation_closed_form(self, riccati):
        # d/dx0 [x0/(1-x0 t)] = 1/(1-x0 t)^2
        y = riccati.x0.with_values([1.0])
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.5, n_steps=100, tol=1e-12)
        for jet in jets.jets:
            expect = 1.0 / (1.0 - 0.5 * jet.time) ** 2
            assert abs(jet.first[0].values[0] - expect) <= 1e-5

    def test_order2_needs_hessian(self, riccati):
        P = sl.Nonlinearity(riccati.P.eval, riccati.P.jacobian_apply, None)
        with pytest.raises(CapabilityError):
            sl.propagate_jet(riccati.semigroup, P, riccati.x0,
                             [unit_dir(riccati)], 0.2, order=2)

    def test_jet_semiflow_law(self, riccati):
        y = riccati.x0.with_values([1.0])
        full = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.5, n_steps=100, tol=1e-12)
        half = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.25, n_steps=50, tol=1e-12)
        mid = half.jets[-1]
        second_leg = sl.propagate_jet(riccati.semigroup, riccati.P, mid.base,
                                      [mid.first[0]], 0.25, n_steps=50,
                                      tol=1e-12)
        composed = second_leg.jets[-1].first[0]
        defect = sl.norm(sl.axpy(-1.0, composed, full.jets[-1].first[0]))
        assert defect <= 1e-6

    def test_growth_envelope(self, riccati):
        # sup_t |psi| <= M exp(M C1 T) |y| with C1 sampled along the orbit
        y = riccati.x0.with_values([1.0])
        T = 0.5
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], T, n_steps=100, tol=1e-12)
        C1 = max(abs(2.0 * s.values[0]) for s in jets.base_report.states)
        bound = np.exp(C1 * T) * sl.norm(y)
        sup_psi = max(sl.norm(j.first[0]) for j in jets.jets)
        assert sup_psi <= bound

    def test_state_continuity_ladder(self, riccati):
        # |psi(t, x_n, y) - psi(t, x, y)| shrinks linearly in |x_n - x|
        y = riccati.x0.with_values([1.0])
        base = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.4, n_steps=50, tol=1e-12)
        psi0 = base.jets[-1].first[0]
        diffs = []
        for k in range(4):
            delta = 0.02 * 0.5 ** k
            xk = riccati.x0.with_values([0.5 + delta])
            jk = sl.propagate_jet(riccati.semigroup, riccati.P, xk, [y], 0.4,
                                  n_steps=50, tol=1e-12,
                                  truncation_radius=base.base_report.truncation_radius)
            diffs.append(sl.norm(sl.axpy(-1.0, psi0, jk.jets[-1].first[0])))
        total = diffs[0] / diffs[-1]
        assert 8 / 3 <= total <= 24  # within factor 3 of linear over 3 halvings

    def test_joint_continuity_modulus_trend(self, riccati):
        # sampled modulus of continuity of (t, x) -> D_xFl on two meshes
        y = riccati.x0.with_values([1.0])

        def dmap(t, x0v):
            if t == 0.0:
                return 1.0
            x = riccati.x0.with_values([x0v])
            jets = sl.propagate_jet(riccati.semigroup, riccati.P, x, [y], t,
                                    n_steps=20, tol=1e-11)
            return jets.jets[-1].first[0].values[0]

        def modulus(mesh):
            ts = np.arange(0.0, 0.4 + 1e-12, mesh)
            xs = np.arange(0.45, 0.55 + 1e-12, mesh / 4)
            vals = np.array([[dmap(t, xv) for xv in xs] for t in ts])
            return max(np.abs(np.diff(vals, axis=0)).max(),
                       np.abs(np.diff(vals, axis=1)).max())

        assert modulus(0.1) >= modulus(0.05)


class TestFdCheck:
    def test_zero_reaction_matches_exactly(self, pure_shift):
        y = sl.state_from_function(pure_shift.grid, lambda s: np.exp(-s))
        rep = sl.fd_check(pure_shift.semigroup, pure_shift.P, pure_shift.x0,
                          y, 0.25, [0.1, 0.05, 0.025], n_steps=10, tol=1e-11)
        assert rep.best_error <= 1e-10
        assert rep.saturated

    def test_riccati_quadratic_order(self, riccati):
        y = riccati.x0.with_values([1.0])
        rep = sl.fd_check(riccati.semigroup, riccati.P, riccati.x0, y, 0.5,
                          [0.04, 0.02, 0.01, 0.005, 0.0025],
                          n_steps=100, tol=1e-12)
        assert rep.best_error <= 1e-6
        assert 1.7 <= rep.observed_order <= 2.3
        assert not rep.saturated

    def test_zero_direction(self, riccati):
        y = riccati.x0.with_values([0.0])
        rep = sl.fd_check(riccati.semigroup, riccati.P, riccati.x0, y, 0.3,
                          [0.1, 0.05], n_steps=50, tol=1e-12)
        assert rep.best_error == 0.0


class TestTimeDerivative:
    def test_shift_orbit_derivative(self, pure_shift):
        grid = pure_shift.grid
        x = sl.state_from_function(grid, lambda s: np.exp(-s))
        jets = sl.propagate_jet(pure_shift.semigroup, pure_shift.P, x, [x],
                                0.1, n_steps=10, tol=1e-12)
        v = sl.time_derivative_reconstruct(jets, 0.02)
        assert np.max(np.abs(v.values + np.exp(-grid.nodes))) <= 1e-5

    def test_diagonal_generator_action(self):
        S = sl.diagonal_semigroup([1.0, 2.0])
        Pz = zero_nonlinearity(S.grid)
        x = sl.StateVector(S.grid, [1.0, 1.0])
        dirs = [x.with_values([1.0, 0.0]), x.with_values([0.0, 1.0])]
        jets = sl.propagate_jet(S, Pz, x, dirs, 0.1, n_steps=10, tol=1e-13)
        v = sl.time_derivative_reconstruct(jets, 0.02)
        assert np.max(np.abs(v.values - [-1.0, -2.0])) <= 1e-8

    def test_riccati_drift_value(self, riccati):
        y = riccati.x0.with_values([1.0])
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.1, n_steps=10, tol=1e-13)
        v = sl.time_derivative_reconstruct(jets, 0.02)
        assert abs(v.values[0] - 0.25) <= 1e-6

    def test_identity_residual_ladder(self, riccati):
        y = riccati.x0.with_values([1.0])
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.16, n_steps=16, tol=1e-13)
        for h in (0.04, 0.08, 0.16):
            v = sl.time_derivative_reconstruct(jets, h)
            assert sl.time_derivative_residual(jets, h, v) <= 1e-5

    def test_h_must_match_a_node(self, riccati):
        y = riccati.x0.with_values([1.0])
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.1, n_steps=10, tol=1e-12)
        with pytest.raises(DomainError):
            sl.time_derivative_reconstruct(jets, 0.013)


class TestRestrictedDifferential:
    def test_identity_at_zero_exact(self, riccati):
        y = riccati.x0.with_values([1.0])
        jets = sl.propagate_jet(riccati.semigroup, riccati.P, riccati.x0,
                                [y], 0.1, n_steps=5, tol=1e-11)
        rep = sl.restricted_differential_invertibility(jets, [y])
        assert rep.sigma_min[0] == 1.0

    def test_diagonal_flow_closed_form(self):
        S = sl.diagonal_semigroup([1.0, 2.0])
        Pz = zero_nonlinearity(S.grid)
        x = sl.StateVector(S.grid, [1.0, 1.0])
        basis = [x.with_values([1.0, 0.0]), x.with_values([0.0, 1.0])]
        jets = sl.propagate_jet(S, Pz, x, basis, 1.0, n_steps=20, tol=1e-13)
        rep = sl.restricted_differential_invertibility(jets, basis)
        assert rep.sigma_min[-1] == pytest.approx(np.exp(-2.0), abs=1e-8)

    def test_shift_family_decay(self, pure_shift):
        chart = pure_shift.known_invariant_chart
        frame = sl.tangent_basis(chart, chart.center)
        jets = sl.propagate_jet(pure_shift.semigroup, pure_shift.P,
                                pure_shift.x0, frame.directions, 0.1,
                                n_steps=10, tol=1e-11)
        rep = sl.restricted_differential_invertibility(jets, frame.directions,
                                                       threshold=0.9)
        # parameter flow scales the decay coordinate by exp(-t)
        assert rep.sigma_min[-1] == pytest.approx(np.exp(-0.1), abs=1e-6)
        assert rep.first_below is None


class TestBackwardEmbed:
    def test_time_zero_identity(self, riccati):
        chart = sl.linear_chart(riccati.x0.with_values([0.0]),
                                [riccati.x0.with_values([1.0])], [[0.1, 2.0]])
        y = riccati.x0.with_values([0.6])
        assert sl.backward_embed(riccati.semigroup, riccati.P, y, 0.0, chart) is y

    def test_diagonal_explicit_inverse(self):
        S = sl.diagonal_semigroup([1.0])
        Pz = zero_nonlinearity(S.grid)
        one = sl.StateVector(S.grid, [1.0])
        chart = sl.linear_chart(sl.StateVector(S.grid, [0.0]), [one],
                                [[0.1, 2.0]])
        y = sl.StateVector(S.grid, [np.exp(-1.0)])
        z = sl.backward_embed(S, Pz, y, 1.0, chart, n_steps=40, tol=1e-10)
        assert abs(z.values[0] - 1.0) <= 1e-9

    def test_riccati_roundtrip(self, riccati):
        chart = sl.linear_chart(riccati.x0.with_values([0.0]),
                                [riccati.x0.with_values([1.0])], [[0.1, 2.0]])
        target = riccati_exact(0.5, 0.3)
        y = riccati.x0.with_values([target])
        z = sl.backward_embed(riccati.semigroup, riccati.P, y, 0.3, chart,
                              n_steps=60, tol=1e-9)
        assert abs(z.values[0] - 0.5) <= 1e-7
        fwd = sl.solve(riccati.semigroup, riccati.P, z, 0.3, 60, 1e-11)
        assert sl.norm(sl.axpy(-1.0, y, fwd.endpoint)) <= 2e-9
