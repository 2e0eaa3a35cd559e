import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import eval_genlaguerre, loggamma

from analysis.quadrature import build_sphere_rule, sphere_rule_for_complex_sphere
from analysis.spectral import (
    a_coefficient,
    annular_bump,
    c_q,
    c_q_closed_form,
    f_hat,
    f_hat_identity_check,
    gamma_ratio,
    laguerre,
    laguerre_phi,
    log_gamma_complex,
    min_theta_order,
    r_k_coefficient,
    r_k_table,
    radial_constant,
    verify_measure_representation,
)
from core.exceptions import PreconditionError
from core.group import GroupDim, koranyi_ball_volume


def test_log_gamma_half():
    assert np.exp(log_gamma_complex(0.5)) == pytest.approx(math.sqrt(math.pi), rel=1e-13)


@pytest.mark.parametrize("z", [0.3 + 2j, 1.7 - 0.4j, 5.0 + 10j, -2.5 + 0.5j, 0.1 - 7j])
def test_log_gamma_against_scipy(z):
    # слева от 1/2 ветви логарифма могут отличаться на 2 pi i
    assert np.exp(log_gamma_complex(z)) == pytest.approx(np.exp(loggamma(z)), rel=1e-11)


@pytest.mark.parametrize("z", [0.2 + 0.3j, 2.5 - 1j, -0.7 + 4j])
def test_functional_equation(z):
    lhs = np.exp(log_gamma_complex(z + 1))
    rhs = z * np.exp(log_gamma_complex(z))
    assert lhs == pytest.approx(rhs, rel=1e-11)


@pytest.mark.parametrize("z", [0.0, -1.0, -3.0])
def test_log_gamma_poles_refused(z):
    with pytest.raises(PreconditionError):
        log_gamma_complex(z)


@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_gamma_asymptotics(mu):
    nu = 100.0
    z = complex(mu, nu)
    expected = math.sqrt(2 * math.pi) * nu ** (mu - 0.5) * math.exp(-math.pi * nu / 2)
    assert abs(np.exp(log_gamma_complex(z))) / expected == pytest.approx(1.0, abs=1e-2)


@pytest.mark.parametrize("Q", [4, 6, 8])
def test_a_vanishes_at_zero_and_is_conjugate_symmetric(Q):
    assert abs(a_coefficient(Q, 0.0)) < 1e-14
    g = np.linspace(0.5, 30.0, 12)
    assert_allclose(a_coefficient(Q, -g), np.conj(a_coefficient(Q, g)), atol=1e-13)
    assert np.all(np.abs(a_coefficient(Q, g)) <= 2.0)


@pytest.mark.parametrize("Q", [4, 6])
def test_c_q_matches_closed_form(Q):
    dim = GroupDim(Q // 2 - 1)
    kappa = Q * koranyi_ball_volume(dim)
    assert c_q(Q, kappa) == pytest.approx(c_q_closed_form(Q, kappa), rel=1e-10)
    # Q = 4: 2 Gamma(5/2) / (Gamma(2) sqrt(pi)) = 3/2
    assert radial_constant(4) == pytest.approx(1.5)


def test_c_q_refusals():
    with pytest.raises(PreconditionError):
        c_q(5, 1.0)
    with pytest.raises(PreconditionError):
        c_q(6, None)


def test_f_hat_at_zero_is_one():
    assert f_hat(6, 0.0) == pytest.approx(1.0, abs=1e-10)


def test_f_hat_identity():
    check = f_hat_identity_check(6, np.linspace(-10.0, 10.0, 9))
    assert check.max_error < 1e-8
    assert_allclose(check.closed, gamma_ratio(6, check.gammas))


def test_representation_with_wide_bump():
    result = verify_measure_representation(annular_bump(1.0, 0.5), 6)
    assert result.lhs == pytest.approx(1.0)
    assert result.error < 1e-3


def test_representation_off_support():
    result = verify_measure_representation(annular_bump(2.5, 0.5), 6)
    assert result.lhs == 0.0
    assert result.abs_error < 1e-3


def test_bump_refusals():
    with pytest.raises(PreconditionError):
        annular_bump(1.0, 1.5)


@pytest.mark.parametrize("k", [0, 1, 5, 10])
@pytest.mark.parametrize("alpha", [0.0, 1.0, 2.0])
def test_laguerre_against_scipy(k, alpha):
    x = np.linspace(0.0, 12.0, 25)
    assert_allclose(laguerre(k, alpha, x), eval_genlaguerre(k, alpha, x), rtol=1e-10, atol=1e-10)


def test_laguerre_refusals():
    with pytest.raises(PreconditionError):
        laguerre(-1, 0.0, 1.0)
    with pytest.raises(PreconditionError):
        laguerre(20_000, 0.0, 1.0)
    with pytest.raises(PreconditionError):
        laguerre_phi(1, 2, 0.0, 1.0)


def test_r_k_bound_and_small_radius():
    for k in range(6):
        for lam in (-4.0, 0.5, 4.0):
            for r in (0.25, 1.0, 2.0):
                assert abs(r_k_coefficient(k, 2, lam, r, 40)) <= 1.0 + 1e-8
    assert r_k_coefficient(3, 2, 1.0, 1e-6, 40) == pytest.approx(1.0, abs=1e-9)


def test_r_k_needs_enough_theta_nodes():
    with pytest.raises(PreconditionError):
        r_k_coefficient(0, 2, 4.0, 2.0, min_theta_order(4.0, 2.0) - 1)


def test_r_k_by_sphere_agrees():
    q = build_sphere_rule(GroupDim(2), 40, sphere_rule_for_complex_sphere(2, 64))
    rows = r_k_table(2, [0, 2], [-1.0, 1.0], [0.5, 1.0], q)
    assert len(rows) == 8
    for row in rows:
        assert row.mismatch < 1e-8
