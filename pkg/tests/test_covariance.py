import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from nss_ortho.core import basis_derivatives, design_matrix, us_grid
from nss_ortho.covariance import (
    JointCovariance,
    StepValidityError,
    WeakIdentificationError,
    beta_cov_delta,
    conditional_beta_cov,
    full_covariance,
    nonlinear_sensitivities,
    r_derivatives,
)
from nss_ortho.ortho import thin_qr_positive

GRID = us_grid()
BETA = np.array([0.04, -0.02, 0.015, 0.008])
SIGMA = 5e-5


def direct_blocks(fact, g, sigma):
    k = np.column_stack([fact.psi, g])
    inv = sigma ** 2 * np.linalg.inv(k.T @ k)
    return inv[:4, :4], inv[4:, 4:], inv[:4, 4:]


def setup(lam):
    fact = thin_qr_positive(design_matrix(GRID, lam))
    g = nonlinear_sensitivities(lam, fact.r @ BETA, GRID)
    return fact, g


def test_conditional_table_values():
    # loose here; the pinned table tolerances live in the acceptance suite
    c = conditional_beta_cov(design_matrix(GRID, (0.6, 0.2)), SIGMA)
    np.testing.assert_allclose(c.std, [1.0e-4, 1.2e-4, 2.3e-4, 4.4e-4], rtol=0.08)
    assert c.max_abs_corr == pytest.approx(0.964, abs=0.005)
    d = conditional_beta_cov(design_matrix(GRID, (0.6, 0.59)), SIGMA)
    assert d.std[2] == pytest.approx(1.5e-2, rel=0.05)
    assert d.max_abs_corr == pytest.approx(1.0, abs=0.005)


def test_conditional_orthonormal_design_and_degenerate():
    q = thin_qr_positive(design_matrix(GRID, (0.6, 0.3))).psi
    c = conditional_beta_cov(q, SIGMA)
    np.testing.assert_allclose(c.cov, SIGMA ** 2 * np.eye(4), rtol=1e-12, atol=1e-24)
    assert c.max_abs_corr <= 1e-10
    assert conditional_beta_cov(design_matrix(GRID, (0.6, 0.6)), SIGMA).degenerate


def test_conditional_equals_phi_inverse():
    phi = design_matrix(GRID, (0.6, 0.3)).values
    c = conditional_beta_cov(phi, SIGMA)
    np.testing.assert_allclose(c.cov, SIGMA ** 2 * np.linalg.inv(phi.T @ phi), rtol=1e-10)


def test_sensitivity_methods_agree():
    lam = (0.6, 0.3)
    a = nonlinear_sensitivities(lam, np.ones(4), GRID, "analytic")
    f = nonlinear_sensitivities(lam, np.ones(4), GRID, "finite_difference")
    assert np.linalg.norm(a - f) <= 1e-6 * np.linalg.norm(a)
    assert np.all(nonlinear_sensitivities(lam, np.zeros(4), GRID) == 0.0)
    with pytest.raises(ValueError):
        nonlinear_sensitivities(lam, np.ones(4), GRID, "magic")


def test_dphi_dlambda2_only_touches_column_four():
    _, d2 = basis_derivatives(GRID.array(), (0.6, 0.3))
    assert np.all(d2[:, :3] == 0.0) and np.any(d2[:, 3] != 0.0)


def test_step_validity_error():
    with pytest.raises(StepValidityError):
        nonlinear_sensitivities((0.6, 0.6 + 5e-6), np.ones(4), GRID, "finite_difference")
    with pytest.raises(StepValidityError):
        nonlinear_sensitivities((0.6, 0.6), np.ones(4), GRID, "analytic")


def test_r_derivatives_agree():
    a = r_derivatives((0.6, 0.3), GRID, "analytic")
    f = r_derivatives((0.6, 0.3), GRID, "finite_difference")
    for x, y in zip(a, f):
        np.testing.assert_allclose(x, y, atol=1e-7 * np.abs(x).max())
        np.testing.assert_allclose(x, np.triu(x), atol=1e-15)


@pytest.mark.parametrize("lam2", [0.12, 0.2, 0.3, 0.4, 0.5, 0.75, 0.9, 1.2, 1.6, 2.5])
def test_schur_blocks_equal_direct_inverse(lam2):
    lam = (0.6, float(lam2))
    fact, g = setup(lam)
    j = full_covariance(fact, g, SIGMA)
    cg, cl, cx = direct_blocks(fact, g, SIGMA)
    for mine, ref in ((j.cov_gamma, cg), (j.cov_lambda, cl), (j.cross, cx)):
        assert np.linalg.norm(mine - ref) <= 1e-10 * np.linalg.norm(ref)
    assert np.min(np.linalg.eigvalsh(j.cov_gamma - SIGMA ** 2 * np.eye(4))) >= -1e-12
    assert np.all(np.linalg.eigvalsh(j.cov_lambda) > 0)


def test_decoupled_sensitivities():
    fact, _ = setup((0.6, 0.3))
    comp = np.linalg.qr(fact.psi, mode="complete")[0][:, 4:6]
    j = full_covariance(fact, comp, SIGMA)
    np.testing.assert_allclose(j.c, 0.0, atol=1e-15)
    np.testing.assert_allclose(j.cov_gamma, SIGMA ** 2 * np.eye(4), rtol=0, atol=1e-22)


def test_weak_identification_error():
    fact, g = setup((0.6, 0.3))
    g_bad = np.column_stack([g[:, 0], 2 * g[:, 0]])
    with pytest.raises(WeakIdentificationError) as exc:
        full_covariance(fact, g_bad, SIGMA)
    assert exc.value.cond_s > 1e15


def test_delta_reduces_to_conditional():
    fact, g = setup((0.6, 0.3))
    j = full_covariance(fact, g, SIGMA)
    forced = JointCovariance(SIGMA ** 2 * np.eye(4), np.zeros((2, 2)), np.zeros((4, 2)), j.s, j.c)
    b = beta_cov_delta(fact, (0.6, 0.3), BETA, forced, grid=GRID)
    phi = design_matrix(GRID, (0.6, 0.3)).values
    np.testing.assert_allclose(b.cov_beta, SIGMA ** 2 * np.linalg.inv(phi.T @ phi), rtol=1e-10)
    assert b.jacobian.shape == (4, 6)


def test_delta_dominates_conditional():
    fact, g = setup((0.6, 0.3))
    j = full_covariance(fact, g, SIGMA)
    for method in ("analytic", "finite_difference"):
        b = beta_cov_delta(fact, (0.6, 0.3), BETA, j, method, GRID)
        cond = conditional_beta_cov(fact, SIGMA).cov
        assert np.min(np.linalg.eigvalsh(b.cov_beta - cond)) >= -1e-12 * np.abs(cond).max()


def test_delta_warns_near_singular_r():
    lam = (0.6, 0.6 + 1e-7)
    fact, g = setup((0.6, 0.3))
    fact2 = thin_qr_positive(design_matrix(GRID, lam))
    j = full_covariance(fact, g, SIGMA)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        b = beta_cov_delta(fact2, lam, BETA, j, grid=GRID)
    assert b.warning is not None and any(issubclass(w.category, RuntimeWarning) for w in rec)


def test_delta_needs_grid():
    fact = thin_qr_positive(design_matrix(GRID, (0.6, 0.3)).values)
    _, g = setup((0.6, 0.3))
    with pytest.raises(ValueError):
        beta_cov_delta(fact, (0.6, 0.3), BETA, full_covariance(fact, g, SIGMA))


def test_delta_method_matches_monte_carlo_in_linear_regime():
    # small noise keeps the decay-rate spread well inside the locally linear region
    lam, sigma = (0.6, 0.3), 5e-6
    taus = GRID.array()
    fact = thin_qr_positive(design_matrix(GRID, lam))
    joint = full_covariance(fact, nonlinear_sensitivities(lam, fact.r @ BETA, GRID), sigma)
    delta = np.r_[np.diag(beta_cov_delta(fact, lam, BETA, joint, grid=GRID).cov_beta), np.diag(joint.cov_lambda)]
    theta = np.r_[BETA, lam]
    y0 = oracles.nss_curve(theta, taus)
    rng = np.random.default_rng(7)
    est = np.array([oracles.joint_refit(y0 + sigma * rng.standard_normal(taus.size), taus, theta) for _ in range(500)])
    ratio = np.var(est, axis=0, ddof=1) / delta
    assert np.all(np.abs(ratio - 1.0) <= 0.25), ratio


@settings(max_examples=40, deadline=None)
@given(l1=st.floats(0.05, 3.0), l2=st.floats(0.05, 3.0))
def test_gamma_conditional_std_is_sigma_and_beta4_bound(l1, l2):
    if abs(l1 - l2) < 1e-2:
        return
    fact = thin_qr_positive(design_matrix(GRID, (l1, l2)))
    np.testing.assert_allclose(np.sqrt(np.diag(SIGMA ** 2 * fact.psi.T @ fact.psi)), SIGMA, rtol=1e-12)
    c = conditional_beta_cov(fact, SIGMA)
    assert c.std[3] / SIGMA >= (1.0 / fact.r44) * (1 - 1e-10)
