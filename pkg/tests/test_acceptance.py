"""Acceptance criteria 1-11, each at its stated tolerance.

Every test records a one-line verdict that conftest prints after the run.
"""

import functools
import inspect
import math
import time

import numpy as np
import pytest

from conftest import CRITERIA
from solitonlab import flow as fl
from solitonlab import homogeneous as hom
from solitonlab import stability as sb
from solitonlab import variation as va
from solitonlab.entropy import minimize_nu
from solitonlab.geometry import WarpedProfile

NU_S2 = math.log(2) - 1
NU_S3 = math.log(2) + 0.5 * math.log(math.pi) - 1.5
S2 = hom.EinsteinFactor.sphere(2)
S3 = hom.EinsteinFactor.sphere(3)


def criterion(num, title):
    """Record PASS/FAIL with the measured numbers the test returns."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            measured = {}
            try:
                fn(*args, measured=measured, **kwargs)
            except BaseException:
                CRITERIA[num] = (False, f"{title}: {_fmt(measured)}")
                print(f"criterion {num}: FAIL {title} {_fmt(measured)}")
                raise
            CRITERIA[num] = (True, f"{title}: {_fmt(measured)}")
            print(f"criterion {num}: PASS {title} {_fmt(measured)}")

        # hide the measured slot from pytest fixture resolution
        sig = inspect.signature(fn)
        run.__signature__ = sig.replace(parameters=[q for q in sig.parameters.values() if q.name != "measured"])
        return run

    return wrap


def _fmt(d):
    return ", ".join(f"{k}={v:.3g}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items())


def _timed_nu(n):
    t0 = time.perf_counter()
    cert = minimize_nu(WarpedProfile.round(n, 400))
    return cert, time.perf_counter() - t0


@pytest.fixture(scope="module")
def spheres():
    return {n: _timed_nu(n) for n in (2, 3)}


@pytest.fixture(scope="module")
def sphere_flow():
    t0 = time.perf_counter()
    tr = fl.run_flow(fl.bump_profile(2, 400, 0.02), "modified", horizon=20.0,
                     controls=fl.FlowControls(dt_max=0.02, residual_tol=1e-7))
    return tr, time.perf_counter() - t0


@pytest.fixture(scope="module")
def product_flow():
    m = hom.soliton_point((S2, S2))
    return fl.run_flow(m.with_scales(m.x * [1.001, 0.999]), "tau", horizon=2.0)


@pytest.fixture(scope="module")
def side_flows():
    """Shorter trajectories of every kind, so monotonicity is checked beyond the flagship runs."""
    out = [fl.run_flow(fl.bump_profile(2, 100, 0.05), k, horizon=0.5,
                       controls=fl.FlowControls(dt_max=0.05)) for k in ("tau", "modified")]
    out.append(fl.run_flow(fl.bump_profile(3, 100, 0.05), "modified", horizon=0.3,
                           controls=fl.FlowControls(dt_max=0.05)))
    out.append(fl.run_flow(hom.product(S2, S3, x=[1.0, 2.5]), "tau", horizon=1.0))
    return out


@criterion(1, "entropy closed forms")
def test_criterion_1_entropy_closed_forms(spheres, measured):
    (c2, t2), (c3, t3) = spheres[2], spheres[3]
    measured.update(nu_s2_err=abs(c2.nu - NU_S2), nu_s3_err=abs(c3.nu - NU_S3),
                    tau_s2_err=abs(c2.tau - 0.5), tau_s3_err=abs(c3.tau - 0.25), secs_s2=t2, secs_s3=t3)
    assert abs(c2.nu - NU_S2) < 1e-6
    assert abs(c3.nu - NU_S3) < 1e-5
    assert abs(c2.tau - 0.5) < 1e-6 and abs(c3.tau - 0.25) < 1e-6
    assert t2 < 10 and t3 < 10
    # the warped and homogeneous backends agree on single spheres
    for n, c in ((2, c2), (3, c3)):
        single = hom.equivariant_entropy(hom.product(hom.EinsteinFactor.sphere(n)))
        assert abs(single.nu - c.nu) < 1e-5


@criterion(2, "Euler-Lagrange certification")
def test_criterion_2_el_certification(spheres, sphere_flow, side_flows, measured):
    certs = [spheres[2][0], spheres[3][0], minimize_nu(fl.bump_profile(2, 200, 0.1))]
    for tr in [sphere_flow[0]] + side_flows:
        for s in tr.states:
            if s is not None and s.warped and s.certificate is not None:
                certs.append(s.certificate)
    converged = [c for c in certs if c.converged]
    worst = max(max(c.residual_el1, c.residual_el2, c.residual_constraint) for c in converged)
    measured.update(certificates=len(converged), worst_residual=worst)
    assert len(converged) > 3
    assert worst < 1e-9


@criterion(3, "monotonicity of nu")
def test_criterion_3_monotone_entropy(sphere_flow, product_flow, side_flows, measured):
    trajectories = [sphere_flow[0], product_flow] + side_flows
    drops = [min(np.diff(tr.nu).min(), 0.0) for tr in trajectories]
    measured.update(trajectories=len(trajectories), min_delta_nu=min(drops))
    assert min(drops) >= -1e-10


@criterion(4, "second-variation consistency")
def test_criterion_4_second_variation(spheres, measured):
    cert = minimize_nu(WarpedProfile.round(2, 400), tol=va.NU_TOL)
    N = sb.assemble_N_full(cert)
    rng = np.random.default_rng(2024)
    errs, imps = [], []
    for _ in range(20):
        h = sb.project_V(va.random_tensor(cert.profile, rng), cert)
        rep = va.check_second_variation(cert, h, step=1e-2, operator=N)
        errs.append(rep.relative_error)
        imps.append(rep.improvement)
    measured.update(samples=len(errs), max_rel_err=max(errs), min_richardson_gain=min(imps))
    assert len(errs) >= 20
    assert max(errs) < 1e-4
    assert min(imps) >= 3.0


@criterion(5, "stability classifications")
def test_criterion_5_classifications(spheres, measured):
    rep = sb.spectrum_on_V(spheres[2][0])
    m = hom.soliton_point((S2, S2))
    closed = hom.stability_matrix(m)
    generic = hom.generic_stability_matrix(m)
    measured.update(s2_top=float(rep.eigenvalues[-1]), s2=rep.classification,
                    product_closed_err=abs(closed.eigenvalues[-1] - 1), product_generic_err=abs(generic.eigenvalues[-1] - 1),
                    product=closed.classification)
    assert np.all(rep.eigenvalues < 0) and rep.classification == "linearly stable"
    assert abs(closed.eigenvalues[-1] - 1.0) < 1e-10
    assert abs(generic.eigenvalues[-1] - 1.0) < 1e-3
    assert closed.classification == generic.classification == "linearly unstable"


@criterion(6, "dynamical stability of the round sphere")
def test_criterion_6_sphere_flow(sphere_flow, measured):
    tr, secs = sphere_flow
    measured.update(status=tr.status, residual=tr.residual[-1], nu_err=abs(tr.nu[-1] - NU_S2), secs=secs)
    assert tr.converged
    assert tr.residual[-1] < 1e-6
    assert abs(tr.nu[-1] - NU_S2) < 1e-6
    assert secs < 300


@criterion(7, "dynamical instability of S2 x S2")
def test_criterion_7_product_instability(product_flow, measured):
    t, asym, rate, monotone = fl.asymmetry_growth(product_flow)
    measured.update(rate=rate, monotone=monotone, growth=float(asym[-1] / asym[0]))
    assert monotone and asym[-1] > asym[0]
    assert abs(rate - 2.0) <= 0.05 * 2.0


@criterion(8, "Lojasiewicz fit")
def test_criterion_8_lojasiewicz(sphere_flow, measured):
    fit = va.fit_lojasiewicz(sphere_flow[0])
    synth = va.fit_lojasiewicz(va.synthetic_trajectory(sigma=0.6))
    measured.update(sigma=fit.sigma, fit_residual=fit.fit_residual, tail=fit.samples,
                    max_ratio=fit.max_pointwise_ratio, synthetic_sigma=synth.sigma)
    assert 0.4 <= fit.sigma <= 0.7
    assert fit.fit_residual < 0.05
    assert fit.pointwise_ok and fit.max_pointwise_ratio <= 1.1
    assert abs(synth.sigma - 0.6) <= 0.01


@criterion(9, "ISD degeneracy")
def test_criterion_9_isd(spheres, measured):
    c2 = minimize_nu(WarpedProfile.round(2, 200))
    rep2 = sb.isd_candidates(c2)
    rep3 = sb.isd_candidates(minimize_nu(WarpedProfile.round(3, 200)))
    assert len(rep2.branch) >= 1
    lam, v, rel = rep2.branch[0]
    vals = v.values if hasattr(v, "values") else np.asarray(v)
    corr = abs(np.corrcoef(vals, np.cos(c2.profile.r))[0, 1])
    obstruction = va.obstruction_integral(c2, v)
    measured.update(s2_branch=len(rep2.branch), rel_F=rel, isd=len(rep2.candidates) + len(rep2.tt_kernel),
                    s3_branch=len(rep3.branch), obstruction=abs(obstruction))
    assert corr > 1 - 1e-8
    assert rel < 1e-6
    assert not rep2.candidates and not rep2.tt_kernel
    assert rep3.branch == [] and not rep3.candidates
    assert abs(obstruction) < 1e-8


@criterion(10, "operator algebra")
def test_criterion_10_operator_algebra(spheres, measured):
    rng = np.random.default_rng(10)
    adj, sym, divric = 0.0, 0.0, 0.0
    for n in (2, 3):
        c = spheres[n][0]
        w = sb.WeightedCalculus(c.profile, c.f, c.tau)
        N = sb.assemble_N_full(c)
        for _ in range(10):
            h, k = va.random_tensor(c.profile, rng), va.random_tensor(c.profile, rng)
            om = sum(rng.normal() * np.sin(j * c.profile.faces) for j in range(1, 5))
            lhs, rhs = w.pair_form(w.div(h), om), w.pair_tensor(h, w.div_adjoint(om))
            adj = max(adj, abs(lhs - rhs) / max(1.0, abs(lhs)))
            sym = max(sym, abs(N.pair(h, k) - N.pair(k, h)) / max(1.0, abs(N.pair(h, k))))
        divric = max(divric, float(np.max(np.abs(w.div(w.ricci())))))
    measured.update(adjoint=adj, symmetry=sym, div_ric=divric)
    assert adj < 1e-8 and sym < 1e-8
    assert divric < 1e-7


@criterion(11, "weighted Laplacian gap")
def test_criterion_11_gap(spheres, measured):
    gaps = {M: sb.eigenvalue_gap(minimize_nu(WarpedProfile.round(2, M))) for M in (100, 200)}
    gaps[400] = sb.eigenvalue_gap(spheres[2][0])
    tau = spheres[2][0].tau
    d1, d2 = abs(gaps[200] - gaps[100]), abs(gaps[400] - gaps[200])
    measured.update(gap_400=gaps[400], bound=1 / (2 * tau), change_100_200=d1, change_200_400=d2)
    assert all(g > 1 / (2 * tau) for g in gaps.values())
    assert d2 <= d1 and d2 < 1e-4
