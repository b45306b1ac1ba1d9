import numpy as np
import pytest

import semiflow_lab as sl
from semiflow_lab.errors import ConfigError, DomainError
from semiflow_lab.mild_solver import (estimate_lipschitz, truncate,
                                      validate_nonlinearity)
from semiflow_lab.models import (componentwise_square, linear_matrix_field,
                                 perturbation_pair, zero_nonlinearity)

from conftest import riccati_exact, rk4_oracle


class TestTruncate:
    def setup_method(self):
        self.S = sl.diagonal_semigroup([0.0, 0.0])
        self.P = componentwise_square(self.S.grid)

    def test_inside_ball_unchanged(self):
        Pt = truncate(self.P, 2.0)
        x = sl.StateVector(self.S.grid, [1.0, -0.5])  # sup norm 1 = K/2
        assert np.array_equal(Pt.eval(x, 0.0).values, self.P.eval(x, 0.0).values)

    def test_outside_ball_radial_projection(self):
        Pt = truncate(self.P, 2.0)
        x = sl.StateVector(self.S.grid, [4.0, 0.0])  # norm 4 = 2K
        proj = sl.StateVector(self.S.grid, [2.0, 0.0])
        assert np.allclose(Pt.eval(x, 0.0).values,
                           self.P.eval(proj, 0.0).values)

    def test_zero_stays_zero(self):
        Pz = zero_nonlinearity(self.S.grid)
        Pt = truncate(Pz, 1.0)
        x = sl.StateVector(self.S.grid, [5.0, 5.0])
        assert sl.norm(Pt.eval(x, 0.0)) == 0.0

    def test_rejects_nonpositive_radius(self):
        with pytest.raises(DomainError):
            truncate(self.P, 0.0)


class TestNonlinearityInvariants:
    def test_riccati_probes(self, riccati):
        rep = validate_nonlinearity(riccati.P, riccati.x0, seed=5)
        assert rep["jacobian_linearity"] < 1e-10
        assert rep["hessian_symmetry"] < 1e-10

    def test_diagonal_linear_probes(self, diagonal_linear):
        rep = validate_nonlinearity(diagonal_linear.P, diagonal_linear.x0, seed=5)
        assert rep["jacobian_linearity"] < 1e-10
        assert rep["hessian_symmetry"] < 1e-10


class TestSolve:
    def test_zero_reaction_reproduces_orbit(self, pure_shift):
        rep = sl.solve(pure_shift.semigroup, pure_shift.P, pure_shift.x0,
                       0.5, 25, 1e-10)
        for t, state in zip(rep.times, rep.states):
            orbit = sl.apply(pure_shift.semigroup, t, pure_shift.x0)
            assert sl.norm(sl.axpy(-1.0, orbit, state)) <= 1e-10

    def test_linear_cancellation_constant_trajectory(self):
        # generator -x plus reaction +x: the state never moves
        S = sl.diagonal_semigroup([1.0])
        P = linear_matrix_field([[1.0]])
        x0 = sl.StateVector(S.grid, [1.0])
        rep = sl.solve(S, P, x0, 1.0, 400, 1e-12)
        for state in rep.states:
            assert abs(state.values[0] - 1.0) < 1e-9

    def test_riccati_against_closed_form_and_rk4(self, riccati):
        # oracle first: closed form agrees with an independent RK4 reference
        oracle = rk4_oracle(lambda v: v ** 2, [0.5], 1.0, 20000)[0]
        assert abs(oracle - riccati_exact(0.5, 1.0)) < 1e-10
        rep = sl.solve(riccati.semigroup, riccati.P, riccati.x0, 1.0, 200,
                       1e-12)
        errs = [abs(s.values[0] - riccati_exact(0.5, t))
                for t, s in zip(rep.times, rep.states)]
        assert max(errs) <= 1e-6
        assert rep.horizon == 1.0

    def test_trajectory_starts_exactly_at_x0(self, riccati):
        rep = sl.solve(riccati.semigroup, riccati.P, riccati.x0, 0.5, 10, 1e-10)
        assert rep.states[0] is riccati.x0

    def test_fixed_point_property(self, riccati, hjm):
        # substituting the trajectory into the one-step integral map
        # reproduces it within 2 tol at every node
        tol = 1e-9
        for m in (riccati, hjm):
            rep = sl.solve(m.semigroup, m.P, m.x0, 0.4, 8, tol)
            dt = 0.4 / 8
            Pt = truncate(m.P, rep.truncation_radius)
            for j in range(8):
                xj, mj, ej = rep.states[j], rep.mid_states[j], rep.states[j + 1]
                tj = rep.times[j]
                g0 = Pt.eval(xj, tj)
                gm = Pt.eval(mj, tj + dt / 2)
                ge = Pt.eval(ej, tj + dt)
                recon = sl.apply(m.semigroup, dt, xj).values + (dt / 6) * (
                    sl.apply(m.semigroup, dt, g0).values
                    + 4 * sl.apply(m.semigroup, dt / 2, gm).values
                    + ge.values)
                defect = np.max(np.abs(ej.values - recon))
                assert defect <= 2 * tol

    def test_step_refinement_against_rk4(self, riccati):
        oracle = rk4_oracle(lambda v: v ** 2, [0.5], 1.0, 40000)[0]
        errs = []
        for n in (50, 100):
            rep = sl.solve(riccati.semigroup, riccati.P, riccati.x0, 1.0, n,
                           1e-13)
            errs.append(abs(rep.endpoint.values[0] - oracle))
        assert errs[0] / errs[1] >= 3.0

    def test_early_stop_reports_short_horizon(self):
        # blow-up type reaction: with a small truncation ball the iterate
        # exits quickly and the horizon must shrink, not silently clip
        S = sl.diagonal_semigroup([0.0])
        P = componentwise_square(S.grid)
        x0 = sl.StateVector(S.grid, [1.0])
        rep = sl.solve(S, P, x0, 0.9, 60, 1e-10, truncation_radius=1.5)
        # true solution 1/(1-t) reaches 1.5 at t = 1/3
        assert rep.horizon < 0.9
        assert rep.horizon == pytest.approx(1.0 / 3.0, abs=0.05)
        assert rep.times[-1] == pytest.approx(rep.horizon)

    def test_n_steps_validation(self, riccati):
        with pytest.raises(ConfigError):
            sl.solve(riccati.semigroup, riccati.P, riccati.x0, 1.0, 1, 1e-10)

    def test_shift_horizon_guard(self, pure_shift):
        with pytest.raises(DomainError):
            sl.solve(pure_shift.semigroup, pure_shift.P, pure_shift.x0,
                     1.5, 10, 1e-10)


class TestSemiflowDefect:
    def test_zero_times_exact(self, riccati):
        assert sl.semiflow_defect(riccati.semigroup, riccati.P, riccati.x0,
                                  0.0, 0.3) == 0.0
        assert sl.semiflow_defect(riccati.semigroup, riccati.P, riccati.x0,
                                  0.3, 0.0) == 0.0

    def test_riccati_quarter(self, riccati):
        d = sl.semiflow_defect(riccati.semigroup, riccati.P, riccati.x0,
                               0.25, 0.25, n_steps=100, tol=1e-12)
        assert d <= 1e-6


class TestGronwall:
    def test_equal_starts(self, riccati):
        cert = sl.gronwall_certificate(riccati.semigroup, riccati.P,
                                       riccati.x0, riccati.x0, 0.5, 50, 1e-10)
        assert cert.lhs == 0.0
        assert cert.holds

    def test_contraction_zero_reaction(self):
        S = sl.diagonal_semigroup([1.0, 2.0])
        P = zero_nonlinearity(S.grid)
        x0 = sl.StateVector(S.grid, [1.0, 0.5])
        y0 = sl.StateVector(S.grid, [0.8, 0.7])
        cert = sl.gronwall_certificate(S, P, x0, y0, 1.0, 40, 1e-10)
        # contraction semigroup with C = 0: bound equals |x0 - y0| with M = 1
        assert cert.M == 1.0
        assert cert.C == 0.0
        assert cert.bound == pytest.approx(sl.norm(sl.axpy(-1.0, y0, x0)))
        assert cert.holds

    def test_riccati_perturbed_pair(self, riccati):
        y0 = riccati.x0.with_values([0.51])
        cert = sl.gronwall_certificate(riccati.semigroup, riccati.P,
                                       riccati.x0, y0, 0.5, 100, 1e-11)
        # oracle: both trajectories in closed form
        ts = np.linspace(0, 0.5, 101)
        lhs_oracle = np.max(np.abs(riccati_exact(0.5, ts) - riccati_exact(0.51, ts)))
        assert cert.lhs == pytest.approx(lhs_oracle, rel=1e-5)
        assert cert.holds
        assert cert.lhs < cert.bound

    def test_random_pairs_every_model(self):
        rng = np.random.default_rng(42)
        for name, scale in [("pure_shift", 1e-3), ("riccati_scalar", 5e-3),
                            ("diagonal_linear", 1e-2), ("hjm_constant_vol", 1e-3)]:
            m = sl.instantiate(name)
            for _ in range(5):
                xa, xb = perturbation_pair(m, scale, rng)
                cert = sl.gronwall_certificate(m.semigroup, m.P, xa, xb,
                                               0.5, 40, 1e-10)
                assert cert.holds, name


def test_continuity_in_initial_data(riccati):
    rep0 = sl.solve(riccati.semigroup, riccati.P, riccati.x0, 0.5, 60, 1e-11)
    M, C = rep0.gronwall_constants
    envelope = 2.0 * M * np.exp(M * C * 0.5)
    rng = np.random.default_rng(9)
    for _ in range(5):
        delta = 1e-3 * rng.standard_normal()
        x1 = riccati.x0.with_values(riccati.x0.values + delta)
        rep1 = sl.solve(riccati.semigroup, riccati.P, x1, 0.5, 60, 1e-11,
                        truncation_radius=rep0.truncation_radius,
                        estimate_constants=False)
        diff = max(sl.norm(sl.axpy(-1.0, b, a))
                   for a, b in zip(rep0.states, rep1.states))
        assert diff <= envelope * abs(delta)


def test_lipschitz_estimate_uses_hint():
    S = sl.diagonal_semigroup([0.0])
    P = zero_nonlinearity(S.grid)
    assert estimate_lipschitz(P, 1.0, sl.StateVector(S.grid, [0.0])) == 0.0


def test_semigroup_norm_exact_for_diagonal():
    S = sl.diagonal_semigroup([1.0, 2.0])
    M, is_est = sl.estimate_semigroup_norm(S, 1.0)
    assert M == 1.0 and not is_est


def test_semigroup_norm_estimate_for_shift(pure_shift):
    M, is_est = sl.estimate_semigroup_norm(pure_shift.semigroup, 0.5, seed=1)
    assert is_est
    # margin continuation grows with probe frequency; stays a small constant
    assert 1.0 <= M < 5.0
