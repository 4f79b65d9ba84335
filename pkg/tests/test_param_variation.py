import numpy as np
import pytest

from shaperate.errors import CoercivityError, PreconditionError, SolverError
from shaperate.param_variation import (EnergyFamily, QuadraticFamily,
                                       envelope_derivative,
                                       envelope_second_derivative,
                                       fd_minimizer_jacobian,
                                       fd_optimal_value_gradient,
                                       fd_optimal_value_hessian,
                                       find_minimizer,
                                       minimizer_continuity_probe,
                                       minimizer_sensitivity,
                                       random_quadratic_family)


def scalar_family():
    """J(u, mu) = 0.5 u^2 - mu u; minimizer u = mu, optimal value -mu^2/2."""
    return EnergyFamily(
        dim_u=1, dim_mu=1,
        value=lambda u, m: float(0.5 * u[0] ** 2 - m[0] * u[0]),
        grad_u=lambda u, m: np.array([u[0] - m[0]]),
        hess_u=lambda u, m: np.array([[1.0]]),
        grad_mu=lambda u, m: np.array([-u[0]]),
        mixed=lambda u, m: np.array([[-1.0]]),
        hess_mu=lambda u, m: np.array([[0.0]]),
        coercivity_floor=0.5)


def parameter_free_family(dim_u=3, dim_mu=2):
    """J(u, mu) = 0.5 |u|^2; no parameter dependence at all."""
    return EnergyFamily(
        dim_u=dim_u, dim_mu=dim_mu,
        value=lambda u, m: float(0.5 * u @ u),
        grad_u=lambda u, m: u.copy(),
        hess_u=lambda u, m: np.eye(dim_u),
        grad_mu=lambda u, m: np.zeros(dim_mu),
        mixed=lambda u, m: np.zeros((dim_u, dim_mu)),
        hess_mu=lambda u, m: np.zeros((dim_mu, dim_mu)),
        coercivity_floor=0.5)


class TestFindMinimizer:
    def test_scalar_closed_form(self):
        rec = find_minimizer(scalar_family(), [2.0], [0.0], tol=1e-12)
        assert rec.u_star == pytest.approx([2.0], abs=1e-12)
        assert rec.newton_iters == 1
        assert rec.residual_norm <= 1e-12

    def test_diagonal_solve(self):
        K = np.diag([2.0, 4.0])
        qf = QuadraticFamily(K=K, C=np.zeros((2, 2)), c=np.array([2.0, 4.0]),
                             Q=np.zeros((2, 2)), q=np.zeros(2))
        rec = find_minimizer(qf.family(), np.zeros(2), np.zeros(2))
        assert rec.u_star == pytest.approx([1.0, 1.0], abs=1e-12)

    def test_random_spd_matches_dense_solve(self):
        rng = np.random.default_rng(11)
        qf = random_quadratic_family(8, 3, rng)
        mu = rng.standard_normal(3)
        rec = find_minimizer(qf.family(), mu, np.zeros(8), tol=1e-12)
        assert np.max(np.abs(rec.u_star - qf.minimizer(mu))) <= 1e-10

    def test_nonquadratic_converges(self):
        # J = cosh(u) - mu u: minimizer u = arcsinh(mu)
        fam = EnergyFamily(
            dim_u=1, dim_mu=1,
            value=lambda u, m: float(np.cosh(u[0]) - m[0] * u[0]),
            grad_u=lambda u, m: np.array([np.sinh(u[0]) - m[0]]),
            hess_u=lambda u, m: np.array([[np.cosh(u[0])]]),
            grad_mu=lambda u, m: np.array([-u[0]]),
            mixed=lambda u, m: np.array([[-1.0]]),
            hess_mu=lambda u, m: np.array([[0.0]]),
            coercivity_floor=0.9)
        rec = find_minimizer(fam, [1.5], [0.0], tol=1e-12)
        assert rec.u_star[0] == pytest.approx(np.arcsinh(1.5), abs=1e-10)

    def test_indefinite_hessian_is_hard_error(self):
        fam = EnergyFamily(
            dim_u=2, dim_mu=1,
            value=lambda u, m: float(0.5 * (u[0] ** 2 - u[1] ** 2)),
            grad_u=lambda u, m: np.array([u[0], -u[1]]),
            hess_u=lambda u, m: np.diag([1.0, -1.0]),
            grad_mu=lambda u, m: np.zeros(1),
            mixed=lambda u, m: np.zeros((2, 1)),
            hess_mu=lambda u, m: np.zeros((1, 1)),
            coercivity_floor=0.1)
        with pytest.raises(CoercivityError):
            find_minimizer(fam, [0.0], [1.0, 1.0])

    def test_declared_floor_enforced_at_minimizer(self):
        fam = scalar_family()
        fam.coercivity_floor = 2.0  # true smallest eigenvalue is 1
        with pytest.raises(CoercivityError):
            find_minimizer(fam, [1.0], [0.0])

    def test_nonconvergence_reports_residual(self):
        with pytest.raises(SolverError):
            find_minimizer(scalar_family(), [2.0], [0.0], max_iters=0)

    def test_bad_tolerance(self):
        with pytest.raises(ValueError):
            find_minimizer(scalar_family(), [2.0], [0.0], tol=0.0)


class TestEnvelopeDerivative:
    def test_scalar_hand_value(self):
        # optimal value -mu^2/2 differentiates to -mu = -2
        fam = scalar_family()
        rec = find_minimizer(fam, [2.0], [0.0])
        assert envelope_derivative(fam, [2.0], rec) == pytest.approx([-2.0],
                                                                     abs=1e-10)

    def test_parameter_free_family_is_flat(self):
        fam = parameter_free_family()
        mu = np.array([0.3, -0.8])
        rec = find_minimizer(fam, mu, np.ones(3))
        assert np.all(envelope_derivative(fam, mu, rec) == 0.0)

    def test_matches_reminimizing_fd(self):
        rng = np.random.default_rng(5)
        qf = random_quadratic_family(8, 3, rng)
        fam = qf.family()
        mu = rng.standard_normal(3)
        rec = find_minimizer(fam, mu, np.zeros(8), tol=1e-12)
        got = envelope_derivative(fam, mu, rec)
        oracle = fd_optimal_value_gradient(fam, mu)
        assert np.max(np.abs(got - oracle)) <= 1e-7 * (1 + np.max(np.abs(oracle)))

    def test_stale_record_rejected(self):
        fam = scalar_family()
        rec = find_minimizer(fam, [2.0], [0.0])
        rec.u_star = rec.u_star + 0.1
        with pytest.raises(PreconditionError):
            envelope_derivative(fam, [2.0], rec)

    def test_wrong_parameter_rejected(self):
        fam = scalar_family()
        rec = find_minimizer(fam, [2.0], [0.0])
        with pytest.raises(PreconditionError):
            envelope_derivative(fam, [2.5], rec)


class TestMinimizerSensitivity:
    def test_scalar_hand_value(self):
        fam = scalar_family()
        rec = find_minimizer(fam, [2.0], [0.0])
        got = minimizer_sensitivity(fam, [2.0], rec)
        assert got.shape == (1, 1)
        assert got[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_parameter_free_family_is_zero(self):
        fam = parameter_free_family()
        mu = np.zeros(2)
        rec = find_minimizer(fam, mu, np.ones(3))
        assert np.all(minimizer_sensitivity(fam, mu, rec) == 0.0)

    def test_matches_fd_of_minimizer_map(self):
        rng = np.random.default_rng(17)
        qf = random_quadratic_family(6, 4, rng)
        fam = qf.family()
        mu = rng.standard_normal(4)
        rec = find_minimizer(fam, mu, np.zeros(6), tol=1e-12)
        got = minimizer_sensitivity(fam, mu, rec)
        oracle = fd_minimizer_jacobian(fam, mu)
        assert np.max(np.abs(got - oracle)) <= 1e-6

    def test_chain_rule_cancellation(self):
        # the discarded envelope term: grad_u at the minimizer kills du/dmu
        rng = np.random.default_rng(23)
        qf = random_quadratic_family(10, 3, rng)
        fam = qf.family()
        mu = rng.standard_normal(3)
        rec = find_minimizer(fam, mu, np.zeros(10), tol=1e-12)
        sens = minimizer_sensitivity(fam, mu, rec)
        g = fam.grad_u(rec.u_star, mu)
        for j in range(3):
            assert abs(g @ sens[:, j]) <= 1e-10


class TestEnvelopeSecondDerivative:
    def test_scalar_hand_value(self):
        # optimal value -mu^2/2 has second derivative -1
        fam = scalar_family()
        rec = find_minimizer(fam, [2.0], [0.0])
        got = envelope_second_derivative(fam, [2.0], rec)
        assert got.shape == (1, 1)
        assert got[0, 0] == pytest.approx(-1.0, abs=1e-12)

    def test_parameter_free_family_is_zero(self):
        fam = parameter_free_family()
        mu = np.zeros(2)
        rec = find_minimizer(fam, mu, np.ones(3))
        assert np.all(envelope_second_derivative(fam, mu, rec) == 0.0)

    def test_matches_fd_hessian(self):
        rng = np.random.default_rng(29)
        qf = random_quadratic_family(9, 4, rng)
        fam = qf.family()
        mu = rng.standard_normal(4)
        rec = find_minimizer(fam, mu, np.zeros(9), tol=1e-12)
        got = envelope_second_derivative(fam, mu, rec)
        oracle = fd_optimal_value_hessian(fam, mu)
        assert np.max(np.abs(got - oracle)) <= 1e-5

    def test_closed_form_schur_complement(self):
        rng = np.random.default_rng(31)
        qf = random_quadratic_family(7, 3, rng)
        fam = qf.family()
        mu = rng.standard_normal(3)
        rec = find_minimizer(fam, mu, np.zeros(7), tol=1e-12)
        expected = qf.Q - qf.C.T @ np.linalg.solve(qf.K, qf.C)
        got = envelope_second_derivative(fam, mu, rec)
        assert np.max(np.abs(got - expected)) <= 1e-10

    def test_raw_asymmetry_is_tiny(self):
        rng = np.random.default_rng(37)
        qf = random_quadratic_family(8, 4, rng)
        fam = qf.family()
        mu = rng.standard_normal(4)
        rec = find_minimizer(fam, mu, np.zeros(8), tol=1e-12)
        sens = minimizer_sensitivity(fam, mu, rec)
        raw = fam.hess_mu(rec.u_star, mu) + fam.mixed(rec.u_star, mu).T @ sens
        assert np.max(np.abs(raw - raw.T)) <= 1e-10


class TestContinuityProbe:
    def test_scalar_exact_shift(self):
        # u(mu) = mu, so the shift is exactly t and the ratio is sqrt(t)
        fam = scalar_family()
        rows = minimizer_continuity_probe(fam, [2.0], [1.0],
                                          [1e-1, 1e-2, 1e-3], tol=1e-13)
        for t, dist, ratio in rows:
            assert dist == pytest.approx(t, rel=1e-9)
            assert ratio == pytest.approx(np.sqrt(t), rel=1e-9)
        assert rows[-1][2] < rows[0][2]  # ratio decays toward 0

    def test_zero_direction(self):
        fam = scalar_family()
        rows = minimizer_continuity_probe(fam, [2.0], [0.0], [1e-1, 1e-2])
        assert all(dist <= 1e-11 for _, dist, _ in rows)

    def test_random_family_slope_is_first_order(self):
        rng = np.random.default_rng(41)
        qf = random_quadratic_family(8, 3, rng)
        fam = qf.family()
        rows = minimizer_continuity_probe(fam, np.zeros(3),
                                          rng.standard_normal(3),
                                          [1e-1, 1e-2, 1e-3], tol=1e-12)
        ts = np.log([r[0] for r in rows])
        ds = np.log([r[1] for r in rows])
        slope = np.polyfit(ts, ds, 1)[0]
        assert abs(slope - 1.0) <= 0.05

    def test_steps_must_decrease(self):
        with pytest.raises(ValueError):
            minimizer_continuity_probe(scalar_family(), [1.0], [1.0],
                                       [1e-3, 1e-2])


class TestDerivativeVerification:
    def test_consistent_family_passes(self):
        rng = np.random.default_rng(43)
        qf = random_quadratic_family(5, 2, rng)
        qf.family().spot_check_derivatives(np.random.default_rng(0))

    def test_bad_gradient_rejected_at_construction(self):
        with pytest.raises(ValueError, match="grad_u"):
            EnergyFamily(
                dim_u=1, dim_mu=1,
                value=lambda u, m: float(0.5 * u[0] ** 2 - m[0] * u[0]),
                grad_u=lambda u, m: np.array([u[0] + m[0]]),  # wrong sign
                hess_u=lambda u, m: np.array([[1.0]]),
                grad_mu=lambda u, m: np.array([-u[0]]),
                mixed=lambda u, m: np.array([[-1.0]]),
                hess_mu=lambda u, m: np.array([[0.0]]),
                coercivity_floor=0.5, verify=True)

    def test_asymmetric_hessian_rejected(self):
        with pytest.raises(ValueError, match="symmetric"):
            EnergyFamily(
                dim_u=2, dim_mu=1,
                value=lambda u, m: float(0.5 * u @ u),
                grad_u=lambda u, m: u.copy(),
                hess_u=lambda u, m: np.array([[1.0, 0.5], [0.0, 1.0]]),
                grad_mu=lambda u, m: np.zeros(1),
                mixed=lambda u, m: np.zeros((2, 1)),
                hess_mu=lambda u, m: np.zeros((1, 1)),
                coercivity_floor=0.5, verify=True)
