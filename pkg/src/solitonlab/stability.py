"""Weighted operators and the second variation of nu on invariant 2-tensors.

An invariant symmetric 2-tensor on a warped metric is ``h = a ds^2 + b phi^2 g_round``
(orthonormal components a, b at cell centres).  One-forms are ``c ds`` with
c sampled on interior faces, functions live at cell centres.

Every operator is defined through a weak form against diagonal Gram
matrices carrying the density e^{-f}:

    W0 = diag(q_cell e^{-f})            functions
    W1 = diag(q_face e^{-f})            one-forms
    WT = blockdiag(W0, (n-1) W0)        2-tensors

The symmetrised derivative ``S = delta^*`` (one-forms -> tensors) and the
gradient ``G = d`` (functions -> one-forms) are difference operators; the
weighted divergences are their exact discrete adjoints,

    delta_f = W1^{-1} S^T WT,          delta_f (on one-forms) = W0^{-1} G^T W1,

so adjointness and self-adjointness hold to round-off by construction.
Convention: ``delta^* omega = sym grad omega = (1/2) L_{omega#} g``, hence
``delta^* dv = Hess v``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .entropy import EntropyCertificate
from .geometry import (
    Calculus,
    ScalarProfile,
    WarpedProfile,
    _unit_stencils,
    conservative_weights,
    curvature,
    quadrature,
    sphere_volume,
)

NEUTRAL = 1e-6
SOLITON_TOL = 1e-6


class StabilityError(RuntimeError):
    pass


@dataclass
class InvariantSymTensor:
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.a.shape != self.b.shape:
            raise ValueError("components live on different grids")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))):
            raise ValueError("tensor has non-finite samples")

    @classmethod
    def from_vector(cls, v):
        M = v.size // 2
        return cls(v[:M].copy(), v[M:].copy())

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.a, self.b])

    def __add__(self, other):
        return InvariantSymTensor(self.a + other.a, self.b + other.b)

    def __mul__(self, s):
        return InvariantSymTensor(s * self.a, s * self.b)

    __rmul__ = __mul__


@dataclass
class OperatorMatrix:
    """Bilinear form ``form`` with Gram ``gram``; the operator is gram^{-1} form."""

    form: np.ndarray
    gram: np.ndarray

    @property
    def matrix(self) -> np.ndarray:
        return self.form / np.diag(self.gram)[:, None]

    def apply(self, h) -> np.ndarray:
        v = h.vector if isinstance(h, InvariantSymTensor) else np.asarray(h)
        return (self.form @ v) / np.diag(self.gram)

    def pair(self, h, k) -> float:
        hv = h.vector if isinstance(h, InvariantSymTensor) else np.asarray(h)
        kv = k.vector if isinstance(k, InvariantSymTensor) else np.asarray(k)
        return float(kv @ self.form @ hv)

    def asymmetry(self) -> float:
        F = self.form
        return float(np.max(np.abs(F - F.T)) / max(np.max(np.abs(F)), 1e-300))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray
    eigentensors: list
    classification: str
    kernel_dim: int
    M: int = 0

    def to_dict(self, tensors=False) -> dict:
        out = {
            "eigenvalues": self.eigenvalues.tolist(),
            "classification": self.classification,
            "kernel_dim": self.kernel_dim,
            "max_eigenvalue": float(self.eigenvalues[-1]) if self.eigenvalues.size else None,
            "M": self.M,
        }
        if tensors:
            out["eigentensors"] = [{"a": t.a.tolist(), "b": t.b.tolist()} for t in self.eigentensors]
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(**kw), indent=2)


def classify(eigenvalues, neutral=NEUTRAL):
    """Linear-stability label from the spectrum of N on V."""
    ev = np.asarray(eigenvalues, dtype=float)
    kernel = int(np.sum(np.abs(ev) < neutral))
    if ev.size and np.max(ev) >= neutral:
        return "linearly unstable", kernel
    if kernel:
        return "neutrally linearly stable", kernel
    return "linearly stable", kernel


class WeightedCalculus:
    """Weak-form operators for one metric and one weight function f."""

    def __init__(self, profile: WarpedProfile, f=None, tau=None):
        self.profile = profile
        self.n = n = profile.n
        M = profile.M
        self.M = M
        calc = Calculus(profile)
        self.calc = calc
        fv = np.zeros(M) if f is None else (f.values if isinstance(f, ScalarProfile) else np.asarray(f, float))
        self.f = fv
        self.tau = tau
        h, alpha, phi = profile.h, profile.alpha, profile.phi
        om = sphere_volume(n - 1)
        wc = conservative_weights(M) if n % 2 == 0 else np.ones(M)
        wf = _face_weights(M, n)
        ef = np.exp(-fv)
        ef_face = calc.face_values(ef)
        pn = calc.phi_face ** (n - 1)
        self.w0 = h * om * wc * alpha * phi ** (n - 1) * ef
        self.w1 = h * om * wf * calc.alpha_face * pn * ef_face
        self.wt = np.concatenate([self.w0, (n - 1) * self.w0])
        self.psi = calc.psi
        D = _flux_difference(M, n) / h
        # divergence of c d/ds in conservative form (alpha phi^(n-1))^{-1} d/dr (phi^(n-1) c)
        trace = D * pn[None, :] / (alpha * phi ** (n - 1))[:, None]
        interp_b = calc.psi[:, None] * calc.F2Ci
        # one-forms -> tensors: a = c_s, b = psi c, with c_s = trace - (n-1) psi c
        self.S = np.vstack([trace - (n - 1) * interp_b, interp_b])
        # functions -> one-forms: minus the adjoint of the weighted divergence
        self.G = -(D.T * wc[None, :]) / (wf * calc.alpha_face)[:, None]
        self.curv = curvature(profile)

    # -- adjoint pairs -------------------------------------------------
    def div_adjoint(self, c) -> InvariantSymTensor:
        """delta_f^* of the one-form c ds (f-independent)."""
        return InvariantSymTensor.from_vector(self.S @ np.asarray(c))

    def div(self, h) -> np.ndarray:
        """delta_f of an invariant tensor, a one-form on interior faces."""
        hv = h.vector if isinstance(h, InvariantSymTensor) else np.asarray(h)
        return (self.S.T @ (self.wt * hv)) / self.w1

    def div_form(self, c) -> np.ndarray:
        """delta_f of a one-form, a function at centres."""
        return (self.G.T @ (self.w1 * np.asarray(c))) / self.w0

    def grad(self, v) -> np.ndarray:
        return self.G @ np.asarray(v)

    def hessian(self, v) -> InvariantSymTensor:
        return self.div_adjoint(self.grad(v))

    # -- Gram-weighted pairings ----------------------------------------
    def pair_tensor(self, h, k) -> float:
        return float(np.sum(self.wt * h.vector * k.vector))

    def pair_form(self, c, e) -> float:
        return float(np.sum(self.w1 * c * e))

    def pair_function(self, u, v) -> float:
        return float(np.sum(self.w0 * u * v))

    # -- quadratic forms -----------------------------------------------
    def function_stiffness(self) -> np.ndarray:
        """K with u^T K v = int <du, dv> e^{-f} dV; Delta_f = W0^{-1} K."""
        return self.G.T @ (self.w1[:, None] * self.G)

    def function_laplacian(self) -> np.ndarray:
        return self.function_stiffness() / self.w0[:, None]

    def tensor_energy(self) -> np.ndarray:
        """B with h^T B k = int <grad h, grad k> e^{-f} dV (rough Laplacian form)."""
        n, M = self.n, self.M
        K = self.function_stiffness()
        D = np.diag(self.w0 * self.psi**2)
        B = np.zeros((2 * M, 2 * M))
        B[:M, :M] = K + 2 * (n - 1) * D
        B[M:, M:] = (n - 1) * K + 2 * (n - 1) * D
        B[:M, M:] = -2 * (n - 1) * D
        B[M:, :M] = -2 * (n - 1) * D
        return B

    def tensor_laplacian(self, h) -> InvariantSymTensor:
        """Delta_f h, defined weakly against WT."""
        return InvariantSymTensor.from_vector((self.tensor_energy() @ h.vector) / self.wt)

    def rcirc_form(self) -> np.ndarray:
        n, M = self.n, self.M
        kr, ks = self.curv.k_rad, self.curv.k_sph
        B = np.zeros((2 * M, 2 * M))
        off = np.diag((n - 1) * self.w0 * kr)
        B[:M, M:] = off
        B[M:, :M] = off
        B[M:, M:] = np.diag((n - 1) * (n - 2) * self.w0 * ks)
        return B

    def rcirc(self, h) -> InvariantSymTensor:
        a, b = self.curv.rcirc(h.a, h.b, self.n)
        return InvariantSymTensor(a, b)

    def ricci(self) -> InvariantSymTensor:
        return InvariantSymTensor(self.curv.ric_rr, self.curv.ric_sph)

    def metric(self) -> InvariantSymTensor:
        return InvariantSymTensor(np.ones(self.M), np.ones(self.M))

    def double_div(self) -> np.ndarray:
        """Matrix E of h -> delta_f delta_f h."""
        return (self.G.T @ (self.S.T * self.wt[None, :])) / self.w0[:, None]


def _flux_difference(M, n):
    """Face-to-centre difference (h = 1) for the flux phi^(n-1) c, parity (-1)^n."""
    return _unit_stencils(M)["f2c_diff_even" if n % 2 == 0 else "f2c_diff"]


def _face_weights(M, n, K=12):
    """Face weights that make the adjoint gradient exact on quadratics near the poles.

    The gradient of a function is defined as minus the adjoint of the
    conservative divergence.  Away from the poles it reduces to the standard
    staggered 4th-order difference (weights 1); near the poles the weights
    are fixed by requiring exactness for (r - pole)^2.
    """
    wc = conservative_weights(M) if n % 2 == 0 else np.ones(M)
    D = _flux_difference(M, n)
    r = np.arange(M) + 0.5
    w = np.ones(M - 1)
    K = min(K, (M - 1) // 2)
    j = np.arange(1, M)
    left = -(D.T @ (wc * r**2))[:K] / (2.0 * j[:K])
    w[:K] = left
    w[M - 1 - K:] = left[::-1]
    return w


def _weighted(cert: EntropyCertificate) -> WeightedCalculus:
    return WeightedCalculus(cert.profile, cert.f, cert.tau)


def weighted_laplacian(h: InvariantSymTensor, cert: EntropyCertificate) -> InvariantSymTensor:
    return _weighted(cert).tensor_laplacian(h)


def weighted_div(h: InvariantSymTensor, cert: EntropyCertificate) -> np.ndarray:
    return _weighted(cert).div(h)


def weighted_div_adjoint(c, cert: EntropyCertificate) -> InvariantSymTensor:
    return _weighted(cert).div_adjoint(c)


def soliton_defect(cert: EntropyCertificate) -> InvariantSymTensor:
    """tau (Ric + Hess f) - g/2, computed with strong-form derivatives."""
    calc = Calculus(cert.profile)
    curv = curvature(cert.profile)
    fss, fb = calc.hessian(cert.f.values)
    t = cert.tau
    return InvariantSymTensor(t * (curv.ric_rr + fss) - 0.5, t * (curv.ric_sph + fb) - 0.5)


def soliton_residual(cert: EntropyCertificate) -> float:
    """L2 norm of tau(Ric + Hess f) - g/2 for the probability measure (4 pi tau)^{-n/2} e^{-f} dV."""
    T = soliton_defect(cert)
    n = cert.profile.n
    q = quadrature(cert.profile).cell * np.exp(-cert.f.values)
    c = (4.0 * math.pi * cert.tau) ** (-n / 2.0)
    val = c * float(q @ (T.a**2 + (n - 1) * T.b**2))
    return math.sqrt(max(val, 0.0))


def _require_soliton(cert: EntropyCertificate, tol=SOLITON_TOL):
    if cert.fixed_tau:
        raise StabilityError("second variation needs a nu-certificate, got a fixed-tau one")
    res = soliton_residual(cert)
    if res > tol:
        raise StabilityError(
            f"second variation only defined at critical points: soliton residual {res:.3e} > {tol:.1e}")


def _vh_operator(wc: WeightedCalculus):
    """W0 (-Delta_f + 1/(2 tau)) as a symmetric matrix."""
    return -wc.function_stiffness() + np.diag(wc.w0) / (2.0 * wc.tau)


def solve_vh(h: InvariantSymTensor, cert: EntropyCertificate, resonance=1e-8) -> ScalarProfile:
    """v_h with (-Delta_f + 1/(2 tau)) v_h = delta_f delta_f h."""
    _require_soliton(cert)
    wc = _weighted(cert)
    A = _vh_operator(wc)
    ev = sla.eigh(wc.function_stiffness(), np.diag(wc.w0), eigvals_only=True)
    gap = np.min(np.abs(ev - 1.0 / (2.0 * cert.tau)))
    if gap < resonance:
        raise StabilityError(f"resonant v_h system: Delta_f eigenvalue within {gap:.2e} of 1/(2 tau)")
    rhs = wc.double_div() @ h.vector
    v = np.linalg.solve(A, wc.w0 * rhs)
    return ScalarProfile(v)


def vh_residual(v: ScalarProfile, h: InvariantSymTensor, cert: EntropyCertificate) -> float:
    wc = _weighted(cert)
    lhs = -(wc.function_laplacian() @ v.values) + v.values / (2.0 * cert.tau)
    return float(np.max(np.abs(lhs - wc.double_div() @ h.vector)))


def _reduced_form(wc: WeightedCalculus) -> np.ndarray:
    return -0.5 * wc.tensor_energy() + wc.rcirc_form()


def assemble_N_full(cert: EntropyCertificate) -> OperatorMatrix:
    """Full second-variation operator including gauge, v_h and Ricci-projection terms."""
    _require_soliton(cert)
    wc = _weighted(cert)
    WT = wc.wt
    B = _reduced_form(wc)
    SW = wc.S.T * WT[None, :]                      # W1 delta_f
    B += SW.T @ (SW / wc.w1[:, None])              # <delta_f h, delta_f k>
    E = wc.double_div()
    A = _vh_operator(wc)                           # W0 (-Delta_f + 1/2tau)
    WE = wc.w0[:, None] * E
    B += 0.5 * WE.T @ np.linalg.solve(A, WE)       # (1/2) <Hess v_h, k>
    ric = wc.ricci().vector
    wr = WT * ric
    denom = float(wc.w0 @ wc.curv.scal)
    B -= np.outer(wr, wr) / denom
    B = 0.5 * (B + B.T)
    return OperatorMatrix(B, np.diag(WT))


def assemble_N_reduced(cert: EntropyCertificate) -> OperatorMatrix:
    """-1/2 Delta_f + R-ring, the form of N on V."""
    wc = _weighted(cert)
    return OperatorMatrix(_reduced_form(wc), np.diag(wc.wt))


def _excluded_directions(wc: WeightedCalculus) -> np.ndarray:
    return np.hstack([wc.S, wc.ricci().vector[:, None]])


def V_basis(cert: EntropyCertificate) -> np.ndarray:
    """Columns: a WT-orthonormal basis of V (WT-complement of range(delta^*) + R Ric)."""
    wc = _weighted(cert)
    X = _excluded_directions(wc)
    s = np.sqrt(wc.wt)
    # orthogonal complement in the scaled coordinates y = sqrt(WT) h
    Q = sla.null_space((X * s[:, None]).T, rcond=1e-12)
    return Q / s[:, None]


def project_V(h: InvariantSymTensor, cert: EntropyCertificate) -> InvariantSymTensor:
    """WT-orthogonal projection onto V."""
    wc = _weighted(cert)
    X = _excluded_directions(wc)
    Gx = X.T @ (wc.wt[:, None] * X)
    coef = sla.lstsq(Gx, X.T @ (wc.wt * h.vector), cond=1e-13)[0]
    return InvariantSymTensor.from_vector(h.vector - X @ coef)


def spectrum_on_V(cert: EntropyCertificate, neutral=NEUTRAL, keep=None) -> SpectrumReport:
    """Spectrum of N = -1/2 Delta_f + R-ring restricted to V, sorted ascending."""
    _require_soliton(cert)
    wc = _weighted(cert)
    Q = V_basis(cert)
    A = Q.T @ _reduced_form(wc) @ Q
    A = 0.5 * (A + A.T)
    try:
        ev, vec = np.linalg.eigh(A)
    except np.linalg.LinAlgError as exc:
        raise StabilityError(f"eigensolve failure: {exc}") from exc
    label, kernel = classify(ev, neutral)
    keep = ev.size if keep is None else keep
    tensors = [InvariantSymTensor.from_vector(Q @ vec[:, -1 - i]) for i in range(min(keep, ev.size))]
    return SpectrumReport(ev, tensors, label, kernel, cert.profile.M)


def confirm_kernel(coarse: SpectrumReport, fine: SpectrumReport, neutral=NEUTRAL,
                   shrink=0.5) -> SpectrumReport:
    """Re-label a fine-grid spectrum keeping only kernel eigenvalues that shrink under refinement.

    A near-zero eigenvalue on the fine grid counts as kernel only if its
    nearest coarse-grid counterpart is larger in modulus by 1/shrink; a
    spurious one that does not shrink is treated by its sign.
    """
    if fine.M <= coarse.M:
        raise StabilityError(f"refinement needs a finer grid, got M={fine.M} after M={coarse.M}")
    ev = np.array(fine.eigenvalues, dtype=float)
    for i in np.flatnonzero(np.abs(ev) < neutral):
        partner = coarse.eigenvalues[np.argmin(np.abs(coarse.eigenvalues - ev[i]))]
        if not abs(ev[i]) <= shrink * abs(partner):
            # not a true kernel eigenvalue: push it out of the neutral band keeping its sign
            ev[i] = math.copysign(neutral, ev[i])
    label, kernel = classify(ev, neutral)
    return SpectrumReport(fine.eigenvalues, fine.eigentensors, label, kernel, fine.M)


def function_spectrum(cert: EntropyCertificate, count=6) -> np.ndarray:
    """Lowest eigenvalues of Delta_f on invariant functions (weak form)."""
    wc = _weighted(cert)
    ev = sla.eigh(wc.function_stiffness(), np.diag(wc.w0), eigvals_only=True)
    return ev[:count]


def eigenvalue_gap(cert: EntropyCertificate, zero_tol=1e-8) -> float:
    """Smallest nonzero eigenvalue of Delta_f on invariant functions."""
    ev = function_spectrum(cert, count=4)
    nonzero = ev[np.abs(ev) > zero_tol]
    return float(nonzero[0])


# -- infinitesimal solitonic deformations ---------------------------------


@dataclass
class ISDReport:
    einstein_constant: float
    laplace_eigenvalues: list
    branch: list = field(default_factory=list)       # (eigenvalue, v, |F(v)|/|v|)
    candidates: list = field(default_factory=list)   # nonzero tensors kept
    tt_kernel: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "einstein_constant": self.einstein_constant,
            "laplace_eigenvalues": self.laplace_eigenvalues,
            "branch": [{"eigenvalue": e, "relative_F_norm": r} for e, _, r in self.branch],
            "isd_count": len(self.candidates) + len(self.tt_kernel),
            "notes": self.notes,
        }


def einstein_constant(cert: EntropyCertificate, tol=1e-6) -> float:
    """mu with Ric = mu g, requiring f constant (Einstein case)."""
    f = cert.f.values
    if np.max(f) - np.min(f) > tol:
        raise StabilityError("not an Einstein certificate: f is not constant")
    return 1.0 / (2.0 * cert.tau)


def laplace_eigenpairs(profile: WarpedProfile, count=8):
    """Lowest eigenpairs of the positive Laplacian on invariant functions (strong form)."""
    L = Calculus(profile).laplacian_matrix()
    ev, vec = np.linalg.eig(L)
    order = np.argsort(ev.real)[:count]
    return ev.real[order], vec.real[:, order]


def conformal_tensor(v, mu, profile: WarpedProfile) -> InvariantSymTensor:
    """F(v) = mu v g + Hess v."""
    calc = Calculus(profile)
    hs, hb = calc.hessian(v)
    return InvariantSymTensor(mu * v + hs, mu * v + hb)


def isd_candidates(cert: EntropyCertificate, eig_tol=1e-6, zero_tol=1e-6) -> ISDReport:
    mu = einstein_constant(cert)
    prof = cert.profile
    ev, vec = laplace_eigenpairs(prof)
    rep = ISDReport(mu, ev.tolist())
    for lam, v in zip(ev, vec.T):
        if abs(lam - 2.0 * mu) > eig_tol * max(1.0, 2.0 * mu):
            continue
        F = conformal_tensor(v, mu, prof)
        rel = max(np.max(np.abs(F.a)), np.max(np.abs(F.b))) / np.max(np.abs(v))
        rep.branch.append((float(lam), v, float(rel)))
        if rel > zero_tol:
            rep.candidates.append(F)
        else:
            rep.notes.append(f"eigenvalue {lam:.9g}: F(v) numerically zero (relative {rel:.2e})")
    if not rep.branch:
        rep.notes.append(f"no invariant Laplace eigenvalue equal to 2 mu = {2 * mu:.9g}")
    rep.tt_kernel = _invariant_tt_kernel(cert, zero_tol)
    return rep


def _invariant_tt_kernel(cert: EntropyCertificate, tol) -> list:
    """Kernel of the Einstein operator on invariant divergence-free traceless tensors.

    Tracelessness forces b = -a/(n-1); the divergence condition then reduces
    to a first-order ODE whose solutions blow up like phi^{-n} at the poles.
    Any discrete null direction is kept only if it is bounded and annihilated
    by Delta_E = Delta - 2 R-ring.
    """
    wc = _weighted(cert)
    n, M = wc.n, wc.M
    T = np.vstack([np.eye(M), -np.eye(M) / (n - 1)])
    D = wc.S.T @ (wc.wt[:, None] * T)
    null = sla.null_space(D, rcond=1e-10)
    out = []
    BE = wc.tensor_energy() - 2.0 * wc.rcirc_form()
    for col in null.T:
        h = T @ col
        scale = np.max(np.abs(h))
        interior = np.max(np.abs(h[M // 4: 3 * M // 4]))
        resid = np.max(np.abs(BE @ h / wc.wt)) / scale
        if interior > 1e-3 * scale and resid < tol:
            out.append(InvariantSymTensor.from_vector(h))
    return out
