import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solitonlab.geometry import (
    Calculus,
    GeometryError,
    ScalarProfile,
    WarpedProfile,
    c2_norm,
    curvature,
    integrate,
    norms,
    quadrature,
    read_profile,
    sphere_volume,
    write_profile,
)
from solitonlab.flow import bump_profile


def test_sphere_volume_closed_forms():
    assert sphere_volume(1) == pytest.approx(2 * math.pi)
    assert sphere_volume(2) == pytest.approx(4 * math.pi)
    assert sphere_volume(3) == pytest.approx(2 * math.pi**2)


@pytest.mark.parametrize("n", [2, 3, 4])
@pytest.mark.parametrize("radius", [1.0, 2.0])
def test_round_sphere_curvature(n, radius):
    p = WarpedProfile.round(n, M=400, radius=radius)
    k = curvature(p)
    assert np.max(np.abs(k.k_rad - 1 / radius**2)) < 1e-7
    assert np.max(np.abs(k.k_sph - 1 / radius**2)) < 1e-7
    assert np.max(np.abs(k.scal - n * (n - 1) / radius**2)) < 1e-6
    assert quadrature(p).volume == pytest.approx(sphere_volume(n) * radius**n, rel=1e-10)


def test_curvature_converges_at_fourth_order():
    errs = []
    for M in (50, 100, 200):
        k = curvature(WarpedProfile.round(3, M))
        errs.append(np.max(np.abs(k.scal - 6.0)))
    assert errs[0] / errs[1] > 10 and errs[1] / errs[2] > 10


def test_derivatives_match_analytic_values():
    p = WarpedProfile.round(2, 200)
    c = Calculus(p)
    u = np.cos(2 * p.r)
    assert np.max(np.abs(c.ds(u) + 2 * np.sin(2 * p.r))) < 1e-6
    assert np.max(np.abs(c.dss(u) + 4 * np.cos(2 * p.r))) < 1e-5


@pytest.mark.parametrize("n", [2, 3])
def test_laplacian_eigenfunctions(n):
    # cos r is the first spherical harmonic: Delta cos r = n cos r
    p = WarpedProfile.round(n, 400)
    u = np.cos(p.r)
    Lu = Calculus(p).laplacian_matrix() @ u
    assert np.max(np.abs(Lu - n * u)) < 1e-6


@settings(max_examples=10, deadline=None)
@given(amp=st.floats(-0.2, 0.2))
def test_gauss_bonnet(amp):
    p = bump_profile(2, 200, amp)
    k = curvature(p)
    assert integrate(k.scal, quadrature(p)) == pytest.approx(8 * math.pi, rel=1e-7)


@settings(max_examples=10, deadline=None)
@given(c=st.floats(0.1, 10.0))
def test_scaling_inverts_curvature(c):
    p = bump_profile(3, 100, 0.05)
    k, ks = curvature(p), curvature(p.scaled(c))
    assert np.allclose(ks.scal, k.scal / c, rtol=1e-9, atol=1e-12)


def test_norms_of_constants():
    p = WarpedProfile.round(2, 200)
    nm = norms(np.ones(200), p)
    assert nm["L2"] == pytest.approx(math.sqrt(4 * math.pi), rel=1e-10)
    assert nm["H1"] == pytest.approx(nm["L2"], rel=1e-8)
    assert nm["sup"] == 1.0
    assert c2_norm(np.zeros(200), np.zeros(200), p) == 0.0


def test_degenerate_profiles_rejected():
    with pytest.raises(GeometryError):
        WarpedProfile(2, math.pi, -np.ones(32))
    with pytest.raises(GeometryError):
        WarpedProfile(2, math.pi, np.ones(8))
    with pytest.raises(GeometryError):
        WarpedProfile.round(2, 64).perturbed(-2 * np.ones(64), np.zeros(64))
    with pytest.raises(GeometryError):
        ScalarProfile(np.array([1.0, np.nan]))


def test_profile_round_trip(tmp_path):
    p = bump_profile(2, 64, 0.1)
    write_profile(p, tmp_path / "p.csv")
    q = read_profile(tmp_path / "p.csv")
    assert q.n == 2 and q.M == 64
    assert np.array_equal(q.phi, p.phi)
