import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from solitonlab import flow as fl
from solitonlab import homogeneous as hom
from solitonlab.geometry import Calculus, WarpedProfile, curvature, quadrature
from solitonlab.stability import WeightedCalculus

S2 = hom.EinsteinFactor.sphere(2)
S3 = hom.EinsteinFactor.sphere(3)


@pytest.fixture(scope="module")
def short_flows():
    b = fl.bump_profile(2, 100, 0.05)
    return {k: fl.run_flow(b, k, horizon=0.3, controls=fl.FlowControls(dt_max=0.05)) for k in fl.KINDS}


@pytest.mark.parametrize("kind", fl.KINDS)
def test_round_sphere_is_stationary(kind):
    s = fl.FlowState(WarpedProfile.round(2, 200))
    v = fl.RHS[kind](s)
    assert np.max(np.abs(v.vector)) < 1e-7
    assert fl.flow_residual(s) < 1e-7


def test_modified_velocity_adds_lie_derivative_of_minus_grad_f():
    b = fl.bump_profile(2, 200, 0.05)
    s = fl.FlowState(b)
    d = fl.rhs_modified_tau(s).vector - fl.rhs_tau(s).vector
    fss, fb = Calculus(b).hessian(s.certificate.f.values)
    assert np.max(np.abs(d + 2 * np.concatenate([fss, fb]))) < 1e-8
    # an independent weak-form Hessian agrees to discretisation accuracy
    w = WeightedCalculus(b, s.certificate.f, s.certificate.tau)
    assert np.max(np.abs(d + 2 * w.hessian(s.certificate.f.values).vector)) < 1e-4
    assert np.max(np.abs(fl.gauge_field(s).values + Calculus(b).ds(s.certificate.f.values))) == 0.0


def test_nu_is_monotone_on_every_accepted_step(short_flows):
    for kind in ("tau", "modified"):
        assert short_flows[kind].max_nu_drop() <= 1e-10


def test_gauge_equivalence_of_tau_and_modified_flows(short_flows):
    a, b = short_flows["tau"], short_flows["modified"]
    nu_a = np.interp(b.t, a.t, a.nu)
    assert np.max(np.abs(nu_a - np.asarray(b.nu))) < 1e-6


def test_normalized_flow_preserves_volume(short_flows):
    tr = short_flows["normalized"]
    v0 = quadrature(tr.states[0].metric).volume
    assert abs(quadrature(tr.final.metric).volume - v0) < 1e-10 * v0


def test_s3_flow_uses_implicit_stepping_and_stays_monotone():
    b = fl.bump_profile(3, 100, 0.05)
    tr = fl.run_flow(b, "modified", horizon=0.2, controls=fl.FlowControls(dt_max=0.05))
    assert tr.status == "horizon"
    assert tr.max_nu_drop() <= 1e-10
    assert tr.residual[-1] < tr.residual[0]


def test_arclength_resampling_preserves_length_and_volume():
    p = fl.bump_profile(2, 200, 0.1)
    alpha = 1 + 0.1 * np.cos(2 * p.r)
    q = WarpedProfile(2, p.L, p.phi, alpha)
    a = fl.to_arclength(q)
    assert a.is_arclength
    assert a.L == pytest.approx(float(np.sum(alpha) * p.h), rel=1e-8)
    assert quadrature(a).volume == pytest.approx(quadrature(q).volume, rel=1e-6)
    assert np.max(np.abs(curvature(a).scal)) < 10


def test_rkc_is_second_order():
    from scipy.integrate import solve_ivp

    F = lambda y: -5.0 * y + np.cos(y)  # noqa: E731
    ref = solve_ivp(lambda t, y: F(y), (0, 1), [1.0], rtol=1e-13, atol=1e-14).y[0, -1]
    errs = []
    for dt in (0.02, 0.01):
        y = np.array([1.0])
        for _ in range(int(round(1 / dt))):
            y = fl.rkc_step(F, y, dt, 5)[0]
        errs.append(abs(y[0] - ref))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(2.0, abs=0.2)


def test_rkc_stability_interval_grows_quadratically():
    b10, b20 = fl.stability_interval(10), fl.stability_interval(20)
    assert b20 / b10 == pytest.approx(4.0, rel=0.05)
    assert fl.stages_for(1.0, 1000.0) >= 1


def test_rosenbrock_is_second_order_on_linear_system():
    A = np.array([[-100.0, 1.0], [0.0, -1.0]])
    F = lambda y: A @ y  # noqa: E731
    y0 = np.array([1.0, 1.0])
    from scipy.linalg import expm

    exact = expm(A * 0.5) @ y0
    errs = []
    for dt in (0.05, 0.025):
        y = y0.copy()
        for _ in range(int(round(0.5 / dt))):
            y, _ = fl.ros2_step(F, A, y, dt)
        errs.append(np.max(np.abs(y - exact)))
    assert errs[0] / errs[1] > 3.0


def test_spectral_radius_of_diagonal_operator():
    d = np.array([1.0, 3.0, 7.0])
    rho = fl.spectral_radius(lambda y: -d * y, np.ones(3), iters=60)
    assert rho == pytest.approx(7.0, rel=0.05)


def test_product_instability_rate():
    m = hom.soliton_point((S2, S2))
    tr = fl.run_flow(m.with_scales(m.x * [1.001, 0.999]), "tau", horizon=2.0)
    t, asym, rate, monotone = fl.asymmetry_growth(tr)
    assert monotone
    assert rate == pytest.approx(2.0, rel=0.05)
    assert tr.nu[-1] > tr.nu[0]


def test_exit_times_grow_like_log_inverse_amplitude():
    t = fl.exit_times((S2, S2), [1e-3, 1e-4, 1e-5])
    assert np.diff(t) == pytest.approx([math.log(10) / 2] * 2, rel=0.02)


@settings(max_examples=5, deadline=None)
@given(x=st.tuples(st.floats(0.2, 0.6), st.floats(2.0, 5.0)))
def test_far_from_soliton_products_hit_the_curvature_ceiling(x):
    tr = fl.run_flow(hom.product(S2, S3, x=list(x)), "tau", horizon=20.0)
    assert tr.status == "blowup"
    assert tr.max_nu_drop() <= 1e-12


def test_trajectory_table(tmp_path, short_flows):
    tr = short_flows["modified"]
    tr.write_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,nu,tau,residual,step,sup_curvature"
    assert len(lines) == len(tr.t) + 1


def test_bad_arguments():
    with pytest.raises(ValueError):
        fl.run_flow(WarpedProfile.round(2, 64), "ricci-deturck")
    with pytest.raises(TypeError):
        fl.run_flow(np.ones(4), "tau")
