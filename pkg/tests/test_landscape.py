import numpy as np
import pytest

from conftest import well_conditioned
from idresnet import landscape as ls
from idresnet.errors import DimensionMismatch, OutsideBall
from idresnet.factorize import Target, factorize_general, stack_product


def scalar_target(r, sigma=1.0, noise=0.0):
    return Target(np.array([[r]]), np.array([[sigma]]), noise)


def scalar_stack(*a):
    return np.array(a, dtype=float).reshape(len(a), 1, 1)


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300)


def test_residual_error_matrix_examples():
    assert not ls.residual_error_matrix(np.zeros((3, 2, 2)), Target(np.eye(2))).any()
    assert ls.residual_error_matrix(scalar_stack(0.0), scalar_target(2.0))[0, 0] == -1.0
    assert ls.residual_error_matrix(scalar_stack(1.0, 1.0), scalar_target(4.0))[0, 0] == 0.0
    with pytest.raises(DimensionMismatch):
        ls.residual_error_matrix(np.zeros((2, 3, 3)), Target(np.eye(2)))


def test_excess_risk_examples():
    assert ls.excess_risk(scalar_stack(0.0), scalar_target(2.0)).excess == 1.0
    assert ls.excess_risk(np.zeros((4, 3, 3)), Target(np.eye(3))).excess == 0.0
    risk = ls.excess_risk(np.zeros((1, 3, 3)), Target(2 * np.eye(3), noise_var=0.25))
    assert risk.constant == 0.75
    assert risk.total == pytest.approx(3.75)


def test_excess_at_factorized_target(rng):
    R = well_conditioned(rng, 5, 0.8)
    rep = factorize_general(R, 32)
    assert ls.excess_risk(rep.stack, Target(R)).excess <= 1e-24
    assert np.linalg.norm(ls.gradient(rep.stack, Target(R))) <= 1e-7


def test_excess_sigma_substitution(rng):
    d = 4
    A = 0.2 * rng.standard_normal((3, d, d))
    R = rng.standard_normal((d, d))
    Sigma = ls.random_psd(rng, d)
    E = ls.residual_error_matrix(A, Target(R, Sigma))
    root = np.real(np.linalg.eigh(Sigma)[1] @ np.diag(np.sqrt(np.linalg.eigh(Sigma)[0])) @ np.linalg.eigh(Sigma)[1].T)
    expected = np.linalg.norm(E @ root) ** 2
    assert ls.excess_risk(A, Target(R, Sigma)).excess == pytest.approx(expected, rel=1e-12)
    # Sigma -> I with E -> E Sigma^{1/2}: same value via trace(E Sigma E^T)
    assert np.trace(E @ Sigma @ E.T) == pytest.approx(expected, rel=1e-12)


def test_gradient_scalar():
    G = ls.gradient(scalar_stack(0.0), scalar_target(2.0))
    assert G.shape == (1, 1, 1) and G[0, 0, 0] == pytest.approx(-2.0)
    Gfd = ls.finite_diff_gradient(scalar_stack(0.0), scalar_target(2.0), 1e-5)
    assert abs(Gfd[0, 0, 0] + 2.0) <= 1e-8


def test_gradient_zero_at_optimum():
    assert not ls.gradient(np.zeros((3, 2, 2)), Target(np.eye(2))).any()
    assert np.abs(ls.finite_diff_gradient(np.zeros((3, 2, 2)), Target(np.eye(2)))).max() <= 1e-9


def test_gradient_seeded_example():
    rng = np.random.default_rng(0)
    A = 0.3 * rng.standard_normal((3, 4, 4))
    t = Target(rng.standard_normal((4, 4)), ls.random_psd(rng, 4))
    assert rel_err(ls.gradient(A, t), ls.finite_diff_gradient(A, t)) <= 1e-6


@pytest.mark.parametrize("parameterization", ["residual", "standard"])
def test_gradient_matches_finite_differences(parameterization):
    rng = np.random.default_rng(123)
    analytic = ls.gradient if parameterization == "residual" else ls.standard_gradient
    worst = 0.0
    for _ in range(100):
        ell, d = int(rng.integers(1, 6)), int(rng.integers(1, 7))
        scale = 0.3 if parameterization == "residual" else 0.8
        A = scale * rng.standard_normal((ell, d, d))
        t = Target(rng.standard_normal((d, d)), ls.random_psd(rng, d))
        worst = max(worst, rel_err(analytic(A, t), ls.finite_diff_gradient(A, t, parameterization=parameterization)))
    assert worst <= 1e-6


def test_gradient_equals_batched_form(rng):
    A = 0.2 * rng.standard_normal((5, 4, 3, 3))
    R = rng.standard_normal((5, 3, 3))
    S = ls.random_psd(rng, 3, 5)
    G = ls.batch_gradient(A, R, S)
    for b in range(5):
        assert np.allclose(G[b], ls.gradient(A[b], Target(R[b], S[b])), atol=1e-13)


def test_standard_bad_critical_point():
    for ell in (2, 3, 5):
        t = Target(np.array([[2.0, 0.5], [0.0, 1.0]]))
        A = np.zeros((ell, 2, 2))
        assert not ls.standard_gradient(A, t).any()
        assert ls.standard_excess(A, t) > 0


def test_standard_single_layer(rng):
    A = rng.standard_normal((1, 3, 3))
    R = rng.standard_normal((3, 3))
    S = ls.random_psd(rng, 3)
    assert np.allclose(ls.standard_gradient(A, Target(R, S))[0], 2 * (A[0] - R) @ S, atol=1e-12)


def test_bound_scalar_equality():
    chk = ls.check_gradient_lower_bound(scalar_stack(0.3), scalar_target(1.0), 0.5)
    assert chk.lhs == pytest.approx(0.36, abs=1e-12)
    assert chk.rhs == pytest.approx(0.36, abs=1e-12)
    assert abs(chk.lhs - chk.rhs) <= 1e-12
    assert chk.holds


def test_bound_at_optimum_is_zero():
    rep = factorize_general(np.diag([1.5, 1.0]), 40)
    chk = ls.check_gradient_lower_bound(rep.stack, Target(np.diag([1.5, 1.0])), 0.9)
    assert chk.lhs <= 1e-26 and chk.rhs <= 1e-26 and chk.holds


def test_bound_outside_ball():
    with pytest.raises(OutsideBall):
        ls.check_gradient_lower_bound(scalar_stack(0.6), scalar_target(1.0), 0.5)


def test_bound_random_samples():
    rng = np.random.default_rng(7)
    for tau in (0.1, 0.5, 0.9):
        res = ls.bound_sweep(rng, tau, 4, 3, 1000)
        assert res.all_hold
        assert np.all(res.maxnorm <= tau + 1e-12)
        assert res.critical_points_are_optimal()


def test_sweep_agrees_with_single_check():
    rng = np.random.default_rng(9)
    t = Target(np.diag([1.2, 0.9]), np.diag([1.0, 0.5]))
    res = ls.bound_sweep(rng, 0.5, 3, 2, 5, target=t)
    A = ls.sample_ball(np.random.default_rng(9), 5, 3, 2, 0.5)
    for i in range(5):
        chk = ls.check_gradient_lower_bound(A[i], t, 0.5)
        assert chk.lhs == pytest.approx(res.lhs[i], rel=1e-10)
        assert chk.rhs == pytest.approx(res.rhs[i], rel=1e-10)


def test_sweep_contains_critical_points():
    res = ls.bound_sweep(np.random.default_rng(1), 0.5, 3, 3, 100)
    assert np.count_nonzero(res.grad_norm <= 1e-10) >= 10


def test_sample_ball_radius():
    A = ls.sample_ball(np.random.default_rng(2), 50, 4, 5, 0.3)
    assert A.shape == (50, 4, 5, 5)
    assert np.all(np.linalg.norm(A, ord=2, axis=(-2, -1)) <= 0.3 + 1e-12)
