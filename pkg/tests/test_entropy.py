import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solitonlab.entropy import (
    EntropyError,
    evaluate_W,
    evaluate_Wtilde,
    lambda_functional,
    minimize_mu,
    minimize_nu,
)
from solitonlab.flow import bump_profile
from solitonlab.geometry import WarpedProfile, quadrature

NU_S2 = math.log(2) - 1
NU_S3 = math.log(2) + 0.5 * math.log(math.pi) - 1.5


@pytest.fixture(scope="module")
def bump_cert():
    return minimize_nu(bump_profile(2, 200, 0.1))


def _normalised(profile, f, tau):
    mass = (4 * math.pi * tau) ** (-profile.n / 2) * float(quadrature(profile).cell @ np.exp(-f))
    return f + math.log(mass)


@pytest.mark.parametrize("n,nu,tau", [(2, NU_S2, 0.5), (3, NU_S3, 0.25)])
def test_round_sphere_entropy(n, nu, tau):
    c = minimize_nu(WarpedProfile.round(n, 400))
    assert c.converged
    assert c.nu == pytest.approx(nu, abs=1e-6)
    assert c.tau == pytest.approx(tau, abs=1e-6)
    assert max(c.residual_el1, c.residual_el2, c.residual_constraint) < 1e-9


def test_constant_f_value_of_W():
    # for f constant, W = tau scal + f - n with f fixed by the normalisation
    p = WarpedProfile.round(2, 200)
    tau = 0.4
    f = math.log(4 * math.pi) - math.log(4 * math.pi * tau)
    expected = tau * 2 + f - 2
    assert evaluate_W(p, np.full(200, f), tau) == pytest.approx(expected, abs=1e-8)
    assert evaluate_Wtilde(p, np.full(200, math.exp(-f / 2)), tau) == pytest.approx(expected, abs=1e-8)


def test_mu_on_round_sphere_is_attained_by_constants():
    p = WarpedProfile.round(2, 200)
    tau = 0.4
    c = minimize_mu(p, tau)
    assert c.mu == pytest.approx(2 * tau - math.log(tau) - 2, abs=1e-8)
    assert np.ptp(c.f.values) < 1e-6


def test_lambda_on_round_sphere():
    lam = lambda_functional(WarpedProfile.round(2, 200))
    assert lam.lam == pytest.approx(2.0, abs=1e-7)


def test_bump_certificate_residuals(bump_cert):
    c = bump_cert
    assert c.converged and c.certified()
    assert max(c.residual_el1, c.residual_el2, c.residual_constraint) < 1e-9
    # the round sphere is a local maximum of nu
    assert c.nu < NU_S2 - 1e-6


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), size=st.floats(1e-3, 0.3))
def test_certificate_minimises_W(bump_cert, seed, size):
    p = bump_cert.profile
    rng = np.random.default_rng(seed)
    k = np.arange(1, 5)
    bumpf = np.cos(np.outer(p.r, k)) @ rng.normal(size=k.size)
    f = _normalised(p, bump_cert.f.values + size * bumpf, bump_cert.tau)
    assert evaluate_W(p, f, bump_cert.tau) >= bump_cert.nu - 1e-10


@settings(max_examples=5, deadline=None)
@given(scale=st.floats(0.25, 4.0))
def test_nu_is_scale_invariant(bump_cert, scale):
    c = minimize_nu(bump_cert.profile.scaled(scale))
    assert c.nu == pytest.approx(bump_cert.nu, abs=1e-8)
    assert c.tau == pytest.approx(scale * bump_cert.tau, rel=1e-7)


def test_unnormalised_f_rejected():
    p = WarpedProfile.round(2, 64)
    with pytest.raises(ValueError):
        evaluate_W(p, np.zeros(64), 0.5)
    with pytest.raises(ValueError):
        minimize_mu(p, -1.0)


def test_warm_start_reproduces_cold_solve(bump_cert):
    warm = minimize_nu(bump_cert.profile, start=bump_cert)
    assert warm.nu == pytest.approx(bump_cert.nu, abs=1e-10)


def test_entropy_error_is_runtime_error():
    assert issubclass(EntropyError, RuntimeError)
