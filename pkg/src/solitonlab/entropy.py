"""Perelman's W, mu and nu on rotationally invariant metrics.

The minimiser is computed in the variable ``w = exp(-f/2)``, which keeps the
density positive.  For fixed tau the Euler-Lagrange system is

    tau (4 Lap w + scal w) - w log w^2 - (n + mu) w = 0,
    (4 pi tau)^{-n/2} int w^2 dV = 1,

and for nu the pair (w, tau) additionally satisfies

    (4 pi tau)^{-n/2} int f e^{-f} dV = n/2 + nu.

Both systems are solved by Newton's method on the discrete equations, so a
converged certificate carries residuals at round-off level.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .geometry import (
    Calculus,
    GeometryError,
    ScalarProfile,
    WarpedProfile,
    curvature,
    quadrature,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class EntropyError(RuntimeError):
    pass


@dataclass
class EntropyCertificate:
    profile: WarpedProfile
    f: ScalarProfile
    tau: float
    nu: float
    residual_el1: float
    residual_el2: float
    residual_constraint: float
    iterations: int
    converged: bool
    fixed_tau: bool = False
    start: str = "constant"
    tol: float = DEFAULT_TOL

    @property
    def w(self) -> np.ndarray:
        return np.exp(-0.5 * self.f.values)

    @property
    def mu(self) -> float:
        return self.nu

    def certified(self, tol=None) -> bool:
        tol = self.tol if tol is None else tol
        ok = self.residual_el1 < tol and self.residual_constraint < tol
        if not self.fixed_tau:
            ok = ok and self.residual_el2 < tol
        return bool(ok)

    def to_dict(self, samples=True) -> dict:
        out = {
            "nu": self.nu,
            "tau": self.tau,
            "residual_el1": self.residual_el1,
            "residual_el2": self.residual_el2 if not self.fixed_tau else None,
            "residual_constraint": self.residual_constraint,
            "iterations": self.iterations,
            "converged": self.converged,
            "fixed_tau": self.fixed_tau,
            "start": self.start,
            "n": self.profile.n,
            "M": self.profile.M,
            "L": self.profile.L,
        }
        if samples:
            out["r"] = self.profile.r.tolist()
            out["f"] = self.f.values.tolist()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2)


@dataclass
class LambdaResult:
    lam: float
    f: ScalarProfile
    residual: float
    min_scal: float


class _Problem:
    """Discrete operators needed by the solvers, assembled once per metric."""

    def __init__(self, profile: WarpedProfile):
        self.profile = profile
        self.n = profile.n
        self.calc = Calculus(profile)
        self.curv = curvature(profile)
        self.scal = self.curv.scal
        self.q = quadrature(profile).cell
        self.lap = self.calc.laplacian_matrix()

    def c(self, tau):
        return (4.0 * math.pi * tau) ** (-self.n / 2.0)

    def el1(self, w, tau, const):
        return tau * (4.0 * (self.lap @ w) + self.scal * w) - w * np.log(w * w) - (self.n + const) * w

    def wtilde(self, w, tau):
        lw = np.log(w * w)
        dens = tau * (4.0 * w * (self.lap @ w) + self.scal * w * w) - lw * w * w - self.n * w * w
        return self.c(tau) * float(self.q @ dens)

    def normalise(self, w, tau):
        return w / math.sqrt(self.c(tau) * float(self.q @ (w * w)))

    def certificate(self, w, tau, const, its, fixed_tau, start, tol):
        n, c = self.n, self.c(tau)
        r1 = self.el1(w, tau, const) / w
        lw = np.log(w * w)
        r2 = c * float(self.q @ (-lw * w * w)) - n / 2.0 - const
        r3 = c * float(self.q @ (w * w)) - 1.0
        cert = EntropyCertificate(
            profile=self.profile,
            f=ScalarProfile(-lw),
            tau=float(tau),
            nu=float(const),
            residual_el1=float(np.max(np.abs(r1))),
            residual_el2=abs(r2),
            residual_constraint=abs(r3),
            iterations=its,
            converged=False,
            fixed_tau=fixed_tau,
            start=start,
            tol=tol,
        )
        cert.converged = cert.certified()
        return cert


def _const_start(prob: _Problem, tau):
    w = np.ones(prob.profile.M)
    return prob.normalise(w, tau)


def _transfer(prob: _Problem, start: EntropyCertificate, tau):
    w = start.w
    if w.size != prob.profile.M:
        raise GeometryError("warm start lives on a different grid")
    return prob.normalise(w, tau)


def evaluate_W(profile: WarpedProfile, f, tau: float, constraint_tol=1e-8) -> float:
    """W(g, f, tau) by quadrature; f must satisfy the normalisation."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    fv = f.values if isinstance(f, ScalarProfile) else np.asarray(f, dtype=float)
    prob = _Problem(profile)
    c = prob.c(tau)
    e = np.exp(-fv)
    mass = c * float(prob.q @ e)
    if abs(mass - 1.0) > constraint_tol:
        raise ValueError(f"constraint violated: (4 pi tau)^(-n/2) int e^-f = {mass!r}")
    fs = prob.calc.ds(fv)
    dens = (tau * (fs**2 + prob.scal) + fv - profile.n) * e
    return c * float(prob.q @ dens)


def evaluate_Wtilde(profile: WarpedProfile, w, tau: float, constraint_tol=1e-8) -> float:
    """The w-form of W, with w^2 = e^{-f}; gradient term in weak form |grad w|^2."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    wv = w.values if isinstance(w, ScalarProfile) else np.asarray(w, dtype=float)
    if np.any(wv <= 0):
        raise ValueError("w must be positive")
    prob = _Problem(profile)
    c = prob.c(tau)
    mass = c * float(prob.q @ (wv * wv))
    if abs(mass - 1.0) > constraint_tol:
        raise ValueError(f"constraint violated: (4 pi tau)^(-n/2) int w^2 = {mass!r}")
    ws = prob.calc.ds(wv)
    dens = tau * (4.0 * ws**2 + prob.scal * wv * wv) - np.log(wv * wv) * wv * wv - profile.n * wv * wv
    return c * float(prob.q @ dens)


def _descent(prob: _Problem, w, tau, steps, floor):
    """Projected, Sobolev-preconditioned gradient descent on the constraint sphere."""
    M = w.size
    P = tau * 4.0 * prob.lap + np.eye(M) * (1.0 + tau * max(np.max(prob.scal), 0.0))
    lu = sla.lu_factor(P)
    val = prob.wtilde(w, tau)
    for _ in range(steps):
        mu = val
        g = prob.el1(w, tau, mu)
        d = sla.lu_solve(lu, g)
        theta = 1.0
        while theta > 1e-6:
            trial = prob.normalise(w * np.exp(-theta * d / w), tau)
            tval = prob.wtilde(trial, tau)
            if tval < val:
                break
            theta *= 0.5
        else:
            break
        w, val = trial, tval
        if val < floor:
            raise EntropyError("entropy undefined: W-tilde decreased past the floor (lambda(g) < 0?)")
    return w


def minimize_mu(profile: WarpedProfile, tau: float, tol=DEFAULT_TOL, max_iter=60,
                start: EntropyCertificate | None = None, descent_steps=20, floor=-1e6):
    """mu(g, tau) and its minimiser, starting from constant f unless warm-started."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    prob = _Problem(profile)
    label = "constant" if start is None else "warm"
    w = _const_start(prob, tau) if start is None else _transfer(prob, start, tau)
    mu = prob.wtilde(w, tau)
    best = prob.certificate(w, tau, mu, 0, True, label, tol)
    if descent_steps and best.residual_el1 > 1e-6:
        w = _descent(prob, w, tau, descent_steps, floor)
        mu = prob.wtilde(w, tau)
    M, n = profile.M, profile.n
    q = prob.q
    prev = np.inf
    for its in range(1, max_iter + 1):
        cert = prob.certificate(w, tau, mu, its - 1, True, label, tol)
        res = max(cert.residual_el1, cert.residual_constraint)
        best = cert
        if _stalled(res, prev, tol):
            break
        prev = res
        c = prob.c(tau)
        F = np.concatenate([prob.el1(w, tau, mu), [c * float(q @ (w * w)) - 1.0]])
        J = np.zeros((M + 1, M + 1))
        J[:M, :M] = tau * 4.0 * prob.lap
        J[np.arange(M), np.arange(M)] += tau * prob.scal - (np.log(w * w) + 2.0 + n + mu)
        J[:M, M] = -w
        J[M, :M] = 2.0 * c * q * w
        step = np.linalg.solve(J, -F)
        dw, dmu = step[:M], step[M]
        theta = 1.0
        while np.any(w + theta * dw <= 0):
            theta *= 0.5
        w = w + theta * dw
        mu = mu + theta * dmu
    else:
        best = prob.certificate(w, tau, mu, max_iter, True, label, tol)
    if not best.converged:
        log.warning("minimize_mu(tau=%g) did not converge: el1=%.3e", tau, best.residual_el1)
    return best


def _stalled(res, prev, tol):
    """Newton stopping rule: well below tol, or below tol and no longer improving."""
    return res < 1e-3 * tol or (res < tol and res > 0.25 * prev)


def _joint_newton(prob: _Problem, w, tau, nu, tol, max_iter):
    M, n = prob.profile.M, prob.n
    q = prob.q
    prev = np.inf
    for its in range(1, max_iter + 1):
        cert = prob.certificate(w, tau, nu, its - 1, False, "", tol)
        res = max(cert.residual_el1, cert.residual_el2, cert.residual_constraint)
        if _stalled(res, prev, tol):
            return cert
        prev = res
        c = prob.c(tau)
        lw = np.log(w * w)
        lapw = prob.lap @ w
        m1 = float(q @ (w * w))
        m2 = float(q @ (-lw * w * w))
        F = np.concatenate([
            prob.el1(w, tau, nu),
            [c * m2 - n / 2.0 - nu, c * m1 - 1.0],
        ])
        J = np.zeros((M + 2, M + 2))
        J[:M, :M] = tau * 4.0 * prob.lap
        J[np.arange(M), np.arange(M)] += tau * prob.scal - (lw + 2.0 + n + nu)
        J[:M, M] = -w
        J[:M, M + 1] = 4.0 * lapw + prob.scal * w
        J[M, :M] = c * q * (-2.0 * w * lw - 2.0 * w)
        J[M, M] = -1.0
        J[M, M + 1] = -(n / (2.0 * tau)) * c * m2
        J[M + 1, :M] = 2.0 * c * q * w
        J[M + 1, M + 1] = -(n / (2.0 * tau)) * c * m1
        step = np.linalg.solve(J, -F)
        dw, dnu, dtau = step[:M], step[M], step[M + 1]
        theta = 1.0
        while np.any(w + theta * dw <= 0) or tau + theta * dtau <= 0:
            theta *= 0.5
            if theta < 1e-8:
                raise EntropyError("joint Newton left the admissible set")
        w = w + theta * dw
        nu = nu + theta * dnu
        tau = tau + theta * dtau
    return prob.certificate(w, tau, nu, max_iter, False, "", tol)


def lambda_functional(profile: WarpedProfile) -> LambdaResult:
    """Perelman's lambda: bottom eigenvalue of 4 Lap + scal (w-substitution)."""
    prob = _Problem(profile)
    A = 4.0 * prob.lap + np.diag(prob.scal)
    try:
        vals, vecs = sla.eig(A)
    except sla.LinAlgError as exc:
        raise EntropyError(f"eigensolve failure: {exc}") from exc
    order = np.argsort(vals.real)
    k = order[0]
    lam = float(vals[k].real)
    v = vecs[:, k].real
    v = v * np.sign(v[np.argmax(np.abs(v))])
    v = v / math.sqrt(float(prob.q @ (v * v)))
    res = float(np.max(np.abs(A @ v - lam * v)))
    f = ScalarProfile(-np.log(np.maximum(v, 1e-300) ** 2)) if np.all(v > 0) else None
    return LambdaResult(lam, f, res, float(np.min(prob.scal)))


def _golden(fun, a, b, iters):
    """Golden-section search on [a, b]; returns (x, samples)."""
    samples = []
    x1 = b - GOLDEN * (b - a)
    x2 = a + GOLDEN * (b - a)
    f1, f2 = fun(x1), fun(x2)
    samples += [(x1, f1), (x2, f2)]
    for _ in range(iters):
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - GOLDEN * (b - a)
            f1 = fun(x1)
            samples.append((x1, f1))
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (b - a)
            f2 = fun(x2)
            samples.append((x2, f2))
    return (x1 if f1 < f2 else x2), samples


def minimize_nu(profile: WarpedProfile, tol=DEFAULT_TOL, max_iter=60,
                start: EntropyCertificate | None = None, golden_iters=12, check_lambda=True):
    """nu(g) = inf over tau of mu(g, tau), with the minimising pair certified.

    Without a warm start: golden-section search over log tau on the bracket
    [n/(2 max scal), n/(2 min scal)] with inner ``minimize_mu`` solves, then a
    joint Newton polish of (w, nu, tau).  With a warm start the polish runs
    directly from the previous pair and falls back to the full search.
    """
    prob = _Problem(profile)
    n = profile.n
    if start is not None:
        try:
            w0 = _transfer(prob, start, start.tau)
            cert = _joint_newton(prob, w0, start.tau, start.nu, tol, max_iter)
            if cert.converged:
                cert.start = "warm"
                return cert
        except (EntropyError, np.linalg.LinAlgError):
            pass
        log.info("warm start failed; falling back to bracketed search")
    if check_lambda:
        lam = lambda_functional(profile)
        if lam.lam <= 0:
            raise EntropyError(f"nu undefined: lambda(g) = {lam.lam:.6g} <= 0")
    smax = float(np.max(prob.scal))
    smin = float(np.min(prob.scal))
    lo = n / (2.0 * smax)
    hi = n / (2.0 * smin) if smin > 0 else 10.0 * lo
    lo_l, hi_l = math.log(lo) - 0.2, math.log(hi) + 0.2

    cache = {}

    def mu_of(logtau):
        warm = cache.get("last")
        c = minimize_mu(profile, math.exp(logtau), tol=tol, start=warm,
                        descent_steps=0 if warm is not None else 20)
        cache["last"] = c
        cache[logtau] = c
        return c.nu

    samples = []
    for _ in range(6):
        x, s = _golden(mu_of, lo_l, hi_l, golden_iters)
        samples += s
        width = hi_l - lo_l
        if x - lo_l < 0.02 * width:
            lo_l -= width
        elif hi_l - x < 0.02 * width:
            hi_l += width
        else:
            break
    else:
        raise EntropyError(f"bracket failure; mu(tau) samples: "
                           f"{[(math.exp(a), b) for a, b in sorted(samples)]}")
    inner = cache[x]
    cert = _joint_newton(prob, inner.w, inner.tau, inner.nu, tol, max_iter)
    cert.start = "constant"
    if not cert.converged:
        log.warning("minimize_nu did not converge: %s", cert.to_dict(samples=False))
    return cert
