"""Ricci flow, tau-flow and modified tau-flow on both backends.

Warped profiles are evolved in the arclength gauge: the cell-centred grid is
kept uniform in arclength by adding, at every instant, the Lie derivative of
the metric along a radial field xi that cancels the non-uniform part of the
radial velocity.  With that gauge the state is just (phi, L).  Diffeomorphism
terms in the velocity are absorbed by xi, so the tau-flow and the modified
tau-flow trace the same profiles.

Time stepping is adaptive and second order: the Runge-Kutta-Chebyshev method
(explicit, stability interval growing like s^2 in the stage count s) in
dimension 2, and a linearly implicit Rosenbrock method in higher dimensions,
where the pole rows of the semi-discrete system carry eigenvalues far off
the real axis.  Each step carries an embedded error estimate and an a
posteriori check that nu does not decrease.
The entropy data (tau, and f for the modified flow) are frozen over a step
and refreshed, warm-started, at every accepted step.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from . import homogeneous as hom
from .entropy import EntropyError, minimize_nu
from .geometry import (
    Calculus,
    GeometryError,
    ScalarProfile,
    WarpedProfile,
    _unit_stencils,
    curvature,
    pole_distance,
    quadrature,
)
from .stability import InvariantSymTensor, soliton_residual as _warped_residual

log = logging.getLogger(__name__)

KINDS = ("normalized", "tau", "modified")


class FlowError(RuntimeError):
    pass


@dataclass
class FlowState:
    metric: object
    t: float = 0.0
    certificate: object = None
    gauge: ScalarProfile | None = None

    @property
    def warped(self) -> bool:
        return isinstance(self.metric, WarpedProfile)


@dataclass
class FlowControls:
    rtol: float = 1e-6
    atol: float = 1e-9
    dt0: float | None = None
    dt_max: float = 0.5
    curvature_ceiling: float = 1e4
    residual_tol: float = 1e-7
    monotone_tol: float = 1e-10
    entropy_tol: float = 1e-10
    max_steps: int = 20000
    snapshot_every: int = 0
    rho_every: int = 25
    max_stages: int = 400
    exit_radius: float | None = None
    damping: float = 2.0 / 13.0
    method: str = "auto"
    jacobian_every: int = 10


@dataclass
class FlowTrajectory:
    kind: str
    states: list = field(default_factory=list)
    t: list = field(default_factory=list)
    nu: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    step: list = field(default_factory=list)
    defect: list = field(default_factory=list)
    curvature: list = field(default_factory=list)
    status: str = "running"
    message: str = ""
    rejected: int = 0
    rhs_evals: int = 0

    def record(self, state: FlowState, nu, tau, residual, dt, curv, keep_state=True):
        defect = max(0.0, self.nu[-1] - nu) if self.nu else 0.0
        self.t.append(float(state.t))
        self.nu.append(float(nu))
        self.tau.append(float(tau))
        self.residual.append(float(residual))
        self.step.append(float(dt))
        self.defect.append(float(defect))
        self.curvature.append(float(curv))
        self.states.append(state if keep_state else None)

    @property
    def final(self) -> FlowState:
        for s in reversed(self.states):
            if s is not None:
                return s
        raise FlowError("trajectory holds no states")

    @property
    def converged(self) -> bool:
        return self.status == "converged"

    def max_nu_drop(self) -> float:
        d = np.diff(np.asarray(self.nu))
        return float(max(0.0, -d.min())) if d.size else 0.0

    def rows(self):
        cols = ("t", "nu", "tau", "residual", "step", "sup_curvature")
        data = zip(self.t, self.nu, self.tau, self.residual, self.step, self.curvature)
        return cols, [list(r) for r in data]

    def write_csv(self, path) -> None:
        cols, rows = self.rows()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for r in rows:
                w.writerow([repr(float(x)) for x in r])

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "status": self.status,
            "message": self.message,
            "steps": len(self.t) - 1,
            "rejected": self.rejected,
            "rhs_evals": self.rhs_evals,
            "t_final": self.t[-1] if self.t else 0.0,
            "nu_initial": self.nu[0] if self.nu else None,
            "nu_final": self.nu[-1] if self.nu else None,
            "residual_final": self.residual[-1] if self.residual else None,
            "max_nu_drop": self.max_nu_drop(),
        }


# ---------------------------------------------------------------------------
# velocities


def _certificate(state: FlowState, tol=1e-10):
    if state.certificate is None:
        if state.warped:
            state.certificate = minimize_nu(state.metric, tol=tol)
        else:
            state.certificate = hom.equivariant_entropy(state.metric)
    return state.certificate


def _check_kind(kind):
    if kind not in KINDS:
        raise ValueError(f"unknown flow kind {kind!r}; expected one of {KINDS}")


def mean_scalar_curvature(profile: WarpedProfile) -> float:
    q = quadrature(profile).cell
    return float(q @ curvature(profile).scal / q.sum())


def _warped_velocity(profile: WarpedProfile, kind, tau=None, f=None) -> InvariantSymTensor:
    curv = curvature(profile)
    if kind == "normalized":
        c = 2.0 / profile.n * mean_scalar_curvature(profile)
    else:
        c = 1.0 / tau
    a = -2.0 * curv.ric_rr + c
    b = -2.0 * curv.ric_sph + c
    if kind == "modified":
        fss, fb = Calculus(profile).hessian(f)
        a = a - 2.0 * fss
        b = b - 2.0 * fb
    return InvariantSymTensor(a, b)


def rhs_normalized(state: FlowState):
    """-2 Ric + (2/n) (mean scal) g."""
    if state.warped:
        return _warped_velocity(state.metric, "normalized")
    return hom.flow_rhs(state.metric, "normalized")


def rhs_tau(state: FlowState):
    """-2 Ric + g / tau_g, with tau_g from the entropy certificate."""
    cert = _certificate(state)
    if state.warped:
        return _warped_velocity(state.metric, "tau", tau=cert.tau)
    return -2.0 * state.metric.mus + state.metric.x / cert.tau


def rhs_modified_tau(state: FlowState):
    """-2 (Ric + Hess f) + g / tau_g, the gradient flow of nu."""
    cert = _certificate(state)
    if state.warped:
        return _warped_velocity(state.metric, "modified", tau=cert.tau, f=cert.f.values)
    # f is constant on the homogeneous backend
    return rhs_tau(state)


RHS = {"normalized": rhs_normalized, "tau": rhs_tau, "modified": rhs_modified_tau}


def gauge_field(state: FlowState) -> ScalarProfile:
    """Radial component of X = -grad f."""
    cert = _certificate(state)
    calc = Calculus(state.metric)
    return ScalarProfile(-calc.ds(cert.f.values), "odd")


def flow_residual(state: FlowState) -> float:
    cert = _certificate(state)
    if state.warped:
        return _warped_residual(cert)
    return hom.soliton_residual(state.metric)


def sup_curvature(metric) -> float:
    if isinstance(metric, WarpedProfile):
        return curvature(metric).sup_norm()
    return metric.max_curvature()


# ---------------------------------------------------------------------------
# arclength gauge


def to_arclength(profile: WarpedProfile) -> WarpedProfile:
    """Resample a profile onto a grid uniform in arclength."""
    if profile.is_arclength:
        return profile
    M = profile.M
    s, L = _centre_arclength(profile)
    # phi is odd about both poles; extend by reflection for the spline
    s_ext = np.concatenate([-s[:4][::-1], s, 2 * L - s[-4:][::-1]])
    p_ext = np.concatenate([-profile.phi[:4][::-1], profile.phi, -profile.phi[-4:][::-1]])
    spline = CubicSpline(s_ext, p_ext)
    target = (np.arange(M) + 0.5) * L / M
    return WarpedProfile(profile.n, L, spline(target))


def _centre_arclength(profile: WarpedProfile):
    """Arclength of the centres and total length; alpha integrated with the even 4th-order face interpolant."""
    h = profile.h
    a_face = _unit_stencils(profile.M)["c2f_even"] @ profile.alpha
    # cell integrals of alpha by Simpson on (face, centre, face)
    cell = h * (a_face[:-1] + 4.0 * profile.alpha + a_face[1:]) / 6.0
    edges = np.concatenate([[0.0], np.cumsum(cell)])
    # centre = left edge + integral over the left half-cell (quadratic through the three values)
    left = h * (5.0 * a_face[:-1] + 8.0 * profile.alpha - a_face[1:]) / 24.0
    return edges[:-1] + left, float(edges[-1])


@lru_cache(maxsize=16)
def _gauge_solver(M: int):
    """Pseudo-inverse of the unit face-to-centre difference and its left null vector."""
    D = _unit_stencils(M)["f2c_diff"]
    U, s, Vt = np.linalg.svd(D)
    y = U[:, -1]
    y = y / y.sum()
    pinv = (Vt.T[:, : M - 1] / s[: M - 1]) @ U[:, : M - 1].T
    y.setflags(write=False)
    pinv.setflags(write=False)
    return y, pinv


def profile_velocity(profile: WarpedProfile, v: InvariantSymTensor):
    """(d phi/dt, dL/dt) in the arclength gauge for metric velocity v.

    d/dt g = v + L_xi g keeps alpha uniform when xi_s = (mean(v_a) - v_a)/2;
    then dL/dt = L mean(v_a)/2 and dphi/dt = phi v_b/2 + phi_s xi.
    """
    M, h = profile.M, profile.h
    y, pinv = _gauge_solver(M)
    vbar = float(y @ v.a)
    xi = h * (pinv @ (0.5 * (vbar - v.a)))
    calc = Calculus(profile)
    dphi = 0.5 * profile.phi * v.b + calc.phi_s * (calc.F2Ci @ xi)
    return dphi, 0.5 * profile.L * vbar


# ---------------------------------------------------------------------------
# Runge-Kutta-Chebyshev (second order)


def _rkc_coefficients(s: int, eps: float = 2.0 / 13.0):
    w0 = 1.0 + eps / s**2
    T = np.zeros(s + 1)
    dT = np.zeros(s + 1)
    d2T = np.zeros(s + 1)
    T[0], T[1] = 1.0, w0
    dT[1] = 1.0
    for j in range(2, s + 1):
        T[j] = 2 * w0 * T[j - 1] - T[j - 2]
        dT[j] = 2 * T[j - 1] + 2 * w0 * dT[j - 1] - dT[j - 2]
        d2T[j] = 4 * dT[j - 1] + 2 * w0 * d2T[j - 1] - d2T[j - 2]
    w1 = dT[s] / d2T[s]
    b = np.zeros(s + 1)
    b[2:] = d2T[2:] / dT[2:] ** 2
    b[0] = b[1] = b[2]
    return w0, w1, T, b


def rkc_step(F, y, dt, s, F0=None, damping=2.0 / 13.0):
    """One RKC2 step with s stages; returns (y_new, F0, number of F evaluations)."""
    if s < 2:
        raise ValueError("RKC needs at least two stages")
    w0, w1, T, b = _rkc_coefficients(s, damping)
    evals = 0
    if F0 is None:
        F0 = F(y)
        evals += 1
    mt1 = b[1] * w1
    y_prev2 = y
    y_prev = y + mt1 * dt * F0
    for j in range(2, s + 1):
        mu = 2.0 * b[j] * w0 / b[j - 1]
        nu = -b[j] / b[j - 2]
        mt = 2.0 * b[j] * w1 / b[j - 1]
        gt = -(1.0 - b[j - 1] * T[j - 1]) * mt
        Fj = F(y_prev)
        evals += 1
        y_new = (1.0 - mu - nu) * y + mu * y_prev + nu * y_prev2 + mt * dt * Fj + gt * dt * F0
        y_prev2, y_prev = y_prev, y_new
    return y_prev, F0, evals


def stability_interval(s: int, damping: float = 2.0 / 13.0) -> float:
    """Length of the real stability interval of the s-stage method."""
    w0, w1, _, _ = _rkc_coefficients(s, damping)
    return (1.0 + w0) / w1


def stages_for(dt, rho, max_stages=400, damping=2.0 / 13.0):
    """Smallest stage count whose stability interval covers dt * rho."""
    s = 2
    while s < max_stages and stability_interval(s, damping) < dt * rho:
        s += 1
    return s


def spectral_radius(F, y, F0=None, iters=30, seed=0):
    """Nonlinear power iteration for the spectral radius of dF/dy."""
    rng = np.random.default_rng(seed)
    F0 = F(y) if F0 is None else F0
    scale = max(np.linalg.norm(y), 1e-8)
    v = rng.standard_normal(y.size)
    v *= 1e-7 * scale / np.linalg.norm(v)
    rho = 0.0
    for _ in range(iters):
        d = F(y + v) - F0
        nd = np.linalg.norm(d)
        if nd == 0.0:
            break
        new = nd / np.linalg.norm(v)
        v = d * (1e-7 * scale / nd)
        if rho and abs(new - rho) < 0.01 * new:
            rho = new
            break
        rho = new
    return rho


# ---------------------------------------------------------------------------
# Rosenbrock (second order, L-stable)

ROS2_GAMMA = 1.0 + 1.0 / math.sqrt(2.0)


def fd_jacobian(F, y, F0=None, rel=1e-7):
    """Forward-difference Jacobian of F at y."""
    F0 = F(y) if F0 is None else F0
    J = np.empty((F0.size, y.size))
    for j in range(y.size):
        e = rel * max(abs(y[j]), 1e-3)
        yp = y.copy()
        yp[j] += e
        J[:, j] = (F(yp) - F0) / e
    return J


def ros2_step(F, J, y, dt, F0=None):
    """Linearly implicit two-stage step; returns (y_new, error estimate).

    The embedded solution is the linearly implicit Euler step y + dt k1.
    """
    F0 = F(y) if F0 is None else F0
    lu = sla.lu_factor(np.eye(y.size) - ROS2_GAMMA * dt * J)
    k1 = sla.lu_solve(lu, F0)
    k2 = sla.lu_solve(lu, F(y + dt * k1) - 2.0 * k1)
    y_new = y + 1.5 * dt * k1 + 0.5 * dt * k2
    return y_new, 0.5 * dt * (k1 + k2)


# ---------------------------------------------------------------------------
# drivers


def _pack(profile: WarpedProfile):
    return np.concatenate([profile.phi, [profile.L]])


def _unpack(y, n):
    return WarpedProfile(n, float(y[-1]), y[:-1])


def _frozen_rhs(kind, n, cert):
    tau = None if cert is None else cert.tau
    f = None if cert is None else cert.f.values

    def F(y):
        p = _unpack(y, n)
        if kind == "normalized":
            return _volume_preserving(p)
        v = _warped_velocity(p, kind, tau=tau, f=f)
        dphi, dL = profile_velocity(p, v)
        return np.concatenate([dphi, [dL]])

    return F


def _volume_preserving(p: WarpedProfile):
    """Gauged velocity of -2 Ric + c g with c fixing the discrete volume.

    The discrete volume is homogeneous of degree n in (phi, L), so adding
    c g changes its rate by c n V / 2; c agrees with (2/n) mean(scal) up to
    the discretisation error.
    """
    curv = curvature(p)
    dphi, dL = profile_velocity(p, InvariantSymTensor(-2.0 * curv.ric_rr, -2.0 * curv.ric_sph))
    cell = quadrature(p).cell
    V = float(cell.sum())
    rate = (p.n - 1) * float(cell @ (dphi / p.phi)) + V * dL / p.L
    c = -2.0 * rate / (p.n * V)
    return np.concatenate([dphi + 0.5 * c * p.phi, [dL + 0.5 * c * p.L]])


def run_flow(initial, kind="modified", horizon=10.0, controls: FlowControls | None = None,
             certificate=None) -> FlowTrajectory:
    """Integrate a flow from a warped profile or a homogeneous metric."""
    _check_kind(kind)
    controls = controls or FlowControls()
    if isinstance(initial, hom.HomogeneousMetric):
        return _run_homogeneous(initial, kind, horizon, controls)
    if not isinstance(initial, WarpedProfile):
        raise TypeError("initial metric must be a WarpedProfile or HomogeneousMetric")
    return _run_warped(initial, kind, horizon, controls, certificate)


def _entropy(profile, start, tol):
    cert = minimize_nu(profile, tol=tol, start=start)
    if not cert.converged:
        raise EntropyError("entropy solve did not converge")
    return cert


def _run_warped(initial, kind, horizon, ctl: FlowControls, certificate):
    profile = to_arclength(initial)
    n = profile.n
    traj = FlowTrajectory(kind)
    try:
        cert = certificate if certificate is not None and profile is initial else _entropy(profile, None, ctl.entropy_tol)
    except (EntropyError, GeometryError) as exc:
        traj.status, traj.message = "entropy_failure", str(exc)
        return traj
    state = FlowState(profile, 0.0, cert)
    res = _warped_residual(cert)
    traj.record(state, cert.nu, cert.tau, res, 0.0, sup_curvature(profile))
    if res < ctl.residual_tol:
        traj.status = "converged"
        return traj
    y = _pack(profile)
    h = profile.h
    method = ctl.method if ctl.method != "auto" else ("rkc" if n == 2 else "rosenbrock")
    if method not in ("rkc", "rosenbrock"):
        raise ValueError(f"unknown time stepper {ctl.method!r}")
    # local order of the error estimate, for the step-size controller
    order = 3 if method == "rkc" else 2
    volume0 = quadrature(profile).volume
    dt = ctl.dt0 or min(ctl.dt_max, 0.1 * horizon, 50.0 * h * h)
    rho, rho_age = None, ctl.rho_every
    J, jac_age = None, 0
    t = 0.0
    steps = 0
    while t < horizon * (1 - 1e-12):
        if steps >= ctl.max_steps:
            traj.status, traj.message = "max_steps", f"stopped after {steps} steps"
            return traj
        F = _frozen_rhs(kind, n, cert)
        F0 = F(y)
        traj.rhs_evals += 1
        if method == "rkc":
            if rho is None or rho_age >= ctl.rho_every:
                rho = 1.2 * max(spectral_radius(F, y, F0), 16.0 / (3.0 * h * h))
                traj.rhs_evals += 30
                rho_age = 0
        elif J is None or jac_age >= ctl.jacobian_every:
            J = fd_jacobian(F, y, F0)
            traj.rhs_evals += y.size
            jac_age = 0
        dt = min(dt, horizon - t, ctl.dt_max)
        while True:
            try:
                if method == "rkc":
                    s = stages_for(dt, rho, ctl.max_stages, ctl.damping)
                    beta = stability_interval(s, ctl.damping)
                    if beta < dt * rho:
                        dt = beta / rho
                    y_new, _, ev = rkc_step(F, y, dt, s, F0, ctl.damping)
                    F1 = F(y_new)
                    traj.rhs_evals += ev + 1
                    est = (12.0 * (y - y_new) + 6.0 * dt * (F0 + F1)) / 15.0
                else:
                    y_new, est = ros2_step(F, J, y, dt, F0)
                    traj.rhs_evals += 1
                scale = ctl.atol + ctl.rtol * np.maximum(np.abs(y), np.abs(y_new))
                err = float(np.sqrt(np.mean((est / scale) ** 2)))
                if not np.all(np.isfinite(y_new)) or err > 1.0:
                    raise _Reject(err)
                if kind == "normalized":
                    # project back onto the initial volume (a change within the local error)
                    y_new = y_new * (volume0 / quadrature(_unpack(y_new, n)).volume) ** (1.0 / n)
                new_profile = _unpack(y_new, n)
                new_cert = _entropy(new_profile, cert, ctl.entropy_tol)
                if new_cert.nu < cert.nu - ctl.monotone_tol:
                    raise _Reject(err, monotone=True)
                break
            except _Reject as rej:
                traj.rejected += 1
                jac_age = ctl.jacobian_every
                log.debug("t=%.6g dt=%.3g rejected (err=%.3g, monotone=%s)", t, dt, rej.err, rej.monotone)
                dt *= 0.5 if (rej.monotone or not np.isfinite(rej.err)) else max(0.2, 0.8 * rej.err ** (-1.0 / order))
            except (GeometryError, FloatingPointError) as exc:
                traj.rejected += 1
                log.debug("t=%.6g dt=%.3g rejected: %s", t, dt, exc)
                dt *= 0.5
            except EntropyError as exc:
                traj.status, traj.message = "entropy_failure", f"t={t:.6g}: {exc}"
                return traj
            if dt < 1e-14 * max(1.0, horizon):
                traj.status, traj.message = "step_underflow", f"step size underflow at t={t:.6g}"
                return traj
        t += dt
        steps += 1
        rho_age += 1
        jac_age += 1
        y, cert = y_new, new_cert
        state = FlowState(new_profile, t, cert)
        res = _warped_residual(cert)
        curv = sup_curvature(new_profile)
        keep = ctl.snapshot_every <= 0 or steps % ctl.snapshot_every == 0
        traj.record(state, cert.nu, cert.tau, res, dt, curv, keep_state=keep)
        if curv > ctl.curvature_ceiling:
            traj.status, traj.message = "blowup", f"sup|curvature| = {curv:.3e} exceeds ceiling"
            traj.states[-1] = state
            return traj
        if res < ctl.residual_tol:
            traj.status = "converged"
            traj.states[-1] = state
            return traj
        dt *= min(4.0, max(0.5, 0.8 * max(err, 1e-10) ** (-1.0 / order)))
    traj.status = "horizon"
    traj.states[-1] = state
    return traj


class _Reject(Exception):
    def __init__(self, err, monotone=False):
        super().__init__("step rejected")
        self.err = err
        self.monotone = monotone


def _run_homogeneous(m: hom.HomogeneousMetric, kind, horizon, ctl: FlowControls):
    traj = FlowTrajectory(kind)
    hkind = "normalized" if kind == "normalized" else "tau"

    def f(t, x):
        return hom.flow_rhs(m.with_scales(x), hkind)

    events = []
    if ctl.exit_radius is not None:
        x0 = m.x.copy()

        def leave(t, x):
            return float(np.max(np.abs(x / np.sum(x) - x0 / np.sum(x0)) / (x0 / np.sum(x0)))) - ctl.exit_radius

        leave.terminal = True
        events.append(leave)

    def blow(t, x):
        return ctl.curvature_ceiling - float(np.max(m.mus / x))

    blow.terminal = True
    events.append(blow)
    n_out = max(int(ctl.max_steps), 2)
    t_eval = np.linspace(0.0, horizon, min(n_out, 2001))
    sol = solve_ivp(f, (0.0, horizon), m.x, method="DOP853", rtol=1e-12, atol=1e-14,
                    t_eval=t_eval, events=events)
    traj.rhs_evals = int(sol.nfev)
    prev_t = 0.0
    for k, t in enumerate(sol.t):
        mk = m.with_scales(sol.y[:, k])
        cert = hom.equivariant_entropy(mk)
        state = FlowState(mk, float(t), cert)
        traj.record(state, cert.nu, cert.tau, hom.soliton_residual(mk), float(t) - prev_t, mk.max_curvature())
        prev_t = float(t)
    if sol.status == 1:
        if ctl.exit_radius is not None and sol.t_events[0].size:
            traj.status, traj.message = "exited", f"left the neighbourhood at t={sol.t_events[0][0]:.6g}"
        else:
            traj.status, traj.message = "blowup", "curvature ceiling reached"
    elif sol.status < 0:
        traj.status, traj.message = "integration_failure", sol.message
    elif traj.residual[-1] < ctl.residual_tol:
        traj.status = "converged"
    else:
        traj.status = "horizon"
    return traj


def bump_profile(n: int, M: int = 400, amplitude: float = 0.02) -> WarpedProfile:
    """Unit sphere with phi scaled by sqrt(1 + amplitude sin^2 2r), an invariant bump."""
    d = pole_distance(M, math.pi)
    return WarpedProfile(n, math.pi, np.sin(d) * np.sqrt(1.0 + amplitude * np.sin(2.0 * d) ** 2))


def exit_times(factors, amplitudes, kind="tau", radius=0.1, horizon=50.0):
    """Exit times from a neighbourhood of a product soliton for shrinking perturbations.

    Each initial metric perturbs the soliton scales by +-amplitude; the exit
    time grows like log(1/amplitude)/rate when the soliton is unstable.
    """
    base = hom.soliton_point(factors)
    out = []
    for eps in amplitudes:
        sign = np.ones(len(factors))
        sign[1::2] = -1.0
        x = base.x * (1.0 + eps * sign)
        ctl = FlowControls(exit_radius=radius)
        tr = run_flow(base.with_scales(x), kind, horizon, ctl)
        out.append(tr.t[-1] if tr.status == "exited" else math.inf)
    return np.array(out)


def asymmetry_growth(trajectory: FlowTrajectory, linear_factor: float = 10.0):
    """|x1/x2 - 1| along a homogeneous two-factor trajectory with its early exponential rate.

    The rate is the slope of log|x1/x2 - 1| over the samples where the
    asymmetry is still within ``linear_factor`` of its initial value, where
    the linearisation about the soliton holds.  Returns (t, asymmetry, rate,
    monotone).
    """
    states = [s for s in trajectory.states if s is not None]
    if not states or states[0].warped or states[0].metric.k != 2:
        raise FlowError("asymmetry growth needs a two-factor homogeneous trajectory")
    t = np.array([s.t for s in states])
    x = np.array([s.metric.x for s in states])
    asym = np.abs(x[:, 0] / x[:, 1] - 1.0)
    early = asym <= linear_factor * asym[0]
    if early.sum() < 3:
        raise FlowError("too few samples in the linear regime to fit a rate")
    rate = float(np.polyfit(t[early], np.log(asym[early]), 1)[0])
    monotone = bool(np.all(np.diff(asym) > 0.0))
    return t, asym, rate, monotone
