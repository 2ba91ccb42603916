"""Rotationally invariant metrics on S^n and the discrete calculus used on them.

A metric ``alpha(r)^2 dr^2 + phi(r)^2 g_{S^{n-1}}`` on ``r in [0, L]`` is sampled
at the M cell centres ``r_i = (i + 1/2) h`` of a uniform grid with spacing
``h = L / M``.  The poles r = 0 and r = L are cell faces, so no sample ever sits
on a coordinate singularity.  Functions and tensor components are extended past
the poles by parity reflection (``phi`` odd, ``alpha`` and scalars even), which
turns every centred stencil into an interior stencil.

All difference operators are fourth-order accurate.  One-forms ``c(r) dr`` live
on the interior faces ``r_j = j h``, ``j = 1..M-1``, where they are odd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

MIN_CELLS = 16


class GeometryError(ValueError):
    pass


def sphere_volume(k: int) -> float:
    """Volume of the unit round S^k."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


# ---------------------------------------------------------------------------
# stencil assembly with parity ghosts


def _reflect_center(idx, M):
    if idx < 0:
        return -1 - idx, True
    if idx >= M:
        return 2 * M - 1 - idx, True
    return idx, False


def _reflect_face(idx, M):
    if idx < 0:
        return -idx, True
    if idx > M:
        return 2 * M - idx, True
    return idx, False


def _assemble(M, n_rows, taps, src, parity):
    """Matrix of a translation-invariant stencil with parity folding.

    ``taps(row)`` yields (source index, coefficient) on the unfolded source
    grid.  ``src`` is "center" (M values) or "face" (interior faces only,
    M - 1 values, odd fields vanish on the poles).
    """
    if src == "center":
        n_cols = M
    else:
        n_cols = M - 1
    A = np.zeros((n_rows, n_cols))
    for row in range(n_rows):
        for idx, coeff in taps(row):
            if src == "center":
                j, flipped = _reflect_center(idx, M)
                sign = parity if flipped else 1.0
                A[row, j] += sign * coeff
            else:
                j, flipped = _reflect_face(idx, M)
                sign = parity if flipped else 1.0
                if j == 0 or j == M:
                    # face fields vanish on the poles
                    continue
                A[row, j - 1] += sign * coeff
    return A


@lru_cache(maxsize=64)
def _unit_stencils(M: int):
    """Stencils for h = 1; callers rescale by powers of h."""
    d1 = [(-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12)]
    d2 = [(-2, -1 / 12), (-1, 16 / 12), (0, -30 / 12), (1, 16 / 12), (2, -1 / 12)]
    out = {}
    for name, par in (("even", 1.0), ("odd", -1.0)):
        out["d1_" + name] = _assemble(M, M, lambda i: [(i + o, c) for o, c in d1], "center", par)
        out["d2_" + name] = _assemble(M, M, lambda i: [(i + o, c) for o, c in d2], "center", par)
    # centre values -> interior faces j = 1..M-1 (face j sits between centres j-1 and j)
    out["grad"] = _assemble(
        M, M - 1,
        lambda k: [(k + 1 + 1, -1 / 24), (k + 1, 27 / 24), (k, -27 / 24), (k - 1, 1 / 24)],
        "center", 1.0)
    # centre values -> all faces 0..M, interpolation (even or odd fields)
    for name, par in (("even", 1.0), ("odd", -1.0)):
        out["c2f_" + name] = _assemble(
            M, M + 1,
            lambda j: [(j - 2, -1 / 16), (j - 1, 9 / 16), (j, 9 / 16), (j + 1, -1 / 16)],
            "center", par)
    # odd interior-face values -> centres: derivative and interpolation
    for name, par in (("", -1.0), ("_even", 1.0)):
        out["f2c_diff" + name] = _assemble(
            M, M,
            lambda i: [(i + 2, -1 / 24), (i + 1, 27 / 24), (i, -27 / 24), (i - 1, 1 / 24)],
            "face", par)
    out["f2c_interp"] = _assemble(
        M, M,
        lambda i: [(i - 1, -1 / 16), (i, 9 / 16), (i + 1, 9 / 16), (i + 2, -1 / 16)],
        "face", -1.0)
    for arr in out.values():
        arr.setflags(write=False)
    return out


@lru_cache(maxsize=64)
def _unit_weights(M: int, odd_integrand: bool):
    """Quadrature weights (h = 1) at centres and interior faces.

    Midpoint and trapezoid rules with Euler-Maclaurin end corrections.  The
    integrand ``u * phi^(n-1)`` is odd about the poles when n is even; when n
    is odd every odd derivative vanishes there and the plain rules are
    already spectrally accurate.
    """
    wc = np.ones(M)
    wf = np.ones(M - 1)
    if odd_integrand:
        c1 = 1 - 54 / 576 - 42 / 5760
        c2 = 1 + 2 / 576 + 14 / 5760
        f1 = 1 + 16 / 144 + 2 / 720
        f2 = 1 - 2 / 144 - 1 / 720
        wc[0] = wc[-1] = c1
        wc[1] = wc[-2] = c2
        wf[0] = wf[-1] = f1
        wf[1] = wf[-2] = f2
    wc.setflags(write=False)
    wf.setflags(write=False)
    return wc, wf


@lru_cache(maxsize=64)
def conservative_weights(M: int, K: int = 12) -> np.ndarray:
    """Centre weights (h = 1) with D^T w = 0 for the even-parity face difference D.

    For even n the face field ``phi^(n-1) c`` of a one-form c is even about
    the poles; with these weights the discrete divergence theorem
    ``sum_i w_i (D F)_i = 0`` holds exactly.  The deviations from 1 decay
    like (13 - sqrt(168))^i away from each pole, and the rule is 4th-order
    accurate for integrands that are odd about the poles.
    """
    K = min(K, M // 2 - 2)
    D = _unit_stencils(M)["f2c_diff_even"]
    cols = K + 2
    A = D[:K, :cols].T
    rhs = -D[K:M // 2, :cols].T.sum(axis=1)
    edge = np.linalg.lstsq(A, rhs, rcond=None)[0]
    w = np.ones(M)
    w[:K] = edge
    w[M - K:] = edge[::-1]
    w.setflags(write=False)
    return w


# ---------------------------------------------------------------------------
# value types


def pole_distance(M: int, L: float) -> np.ndarray:
    """Distance from each cell centre to the nearer pole, exact in both halves.

    Evaluating sin(r) near r = L loses the absolute precision of L - r, which
    second differences then amplify; symmetric profiles should use this.
    """
    i = np.arange(M)
    return (np.minimum(i, M - 1 - i) + 0.5) * (L / M)


@dataclass(frozen=True)
class WarpedProfile:
    """Metric ``alpha^2 dr^2 + phi^2 g_round`` on S^n sampled at cell centres.

    ``alpha`` defaults to one, i.e. ``r`` is arclength; other values only arise
    when a profile is perturbed by a general invariant 2-tensor.
    """

    n: int
    L: float
    phi: np.ndarray
    alpha: np.ndarray = None

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float)
        alpha = np.ones_like(phi) if self.alpha is None else np.asarray(self.alpha, dtype=float)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "alpha", alpha)
        if self.n < 2:
            raise GeometryError("dimension must be at least 2")
        if phi.ndim != 1 or alpha.shape != phi.shape:
            raise GeometryError("phi and alpha must be 1-d arrays of equal length")
        if phi.size < MIN_CELLS:
            raise GeometryError(f"resolution: need at least {MIN_CELLS} cells, got {phi.size}")
        if not (self.L > 0 and np.isfinite(self.L)):
            raise GeometryError("interval length must be positive")
        if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
            raise GeometryError("degenerate metric: phi must be positive on the open interval")
        if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
            raise GeometryError("degenerate metric: alpha must be positive")

    @classmethod
    def from_function(cls, n, func, M=400, L=math.pi):
        h = L / M
        r = (np.arange(M) + 0.5) * h
        return cls(n, L, func(r))

    @classmethod
    def round(cls, n, M=400, radius=1.0):
        L = math.pi * radius
        return cls(n, L, radius * np.sin(pole_distance(M, L) / radius))

    @property
    def M(self) -> int:
        return self.phi.size

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def r(self) -> np.ndarray:
        return (np.arange(self.M) + 0.5) * self.h

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.M + 1) * self.h

    @property
    def faces(self) -> np.ndarray:
        return self.edges[1:-1]

    @property
    def is_arclength(self) -> bool:
        return bool(np.all(self.alpha == 1.0))

    def scaled(self, c: float) -> "WarpedProfile":
        """The metric c * g."""
        s = math.sqrt(c)
        return WarpedProfile(self.n, self.L, self.phi * s, self.alpha * s)

    def perturbed(self, a, b, t=1.0) -> "WarpedProfile":
        """The metric g + t*h for h with orthonormal-frame components (a, b)."""
        qa = 1.0 + t * np.asarray(a)
        qb = 1.0 + t * np.asarray(b)
        if np.any(qa <= 0) or np.any(qb <= 0):
            raise GeometryError("degenerate metric: perturbation is not positive definite")
        return WarpedProfile(self.n, self.L, self.phi * np.sqrt(qb), self.alpha * np.sqrt(qa))


@dataclass(frozen=True)
class ScalarProfile:
    """Rotation-invariant function sampled at cell centres."""

    values: np.ndarray
    parity: str = "even"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.parity not in ("even", "odd"):
            raise GeometryError("parity must be 'even' or 'odd'")
        if not np.all(np.isfinite(v)):
            raise GeometryError("scalar profile has non-finite samples")


@dataclass(frozen=True)
class CurvaturePack:
    k_rad: np.ndarray
    k_sph: np.ndarray
    ric_rr: np.ndarray
    ric_sph: np.ndarray
    scal: np.ndarray

    def rcirc(self, a, b, n):
        """R-circle action on an invariant 2-tensor (a, b); R-circle(g) = Ric."""
        return ((n - 1) * self.k_rad * b, self.k_rad * a + (n - 2) * self.k_sph * b)

    def sup_norm(self) -> float:
        return float(max(np.max(np.abs(self.k_rad)), np.max(np.abs(self.k_sph))))


@dataclass(frozen=True)
class Quadrature:
    """Volume weights: integral of u dV = sum(cell * u); faces for one-form pairings."""

    cell: np.ndarray
    face: np.ndarray

    def weighted(self, f_cell, f_face=None) -> "Quadrature":
        f_face = np.zeros_like(self.face) if f_face is None else f_face
        return Quadrature(self.cell * np.exp(-f_cell), self.face * np.exp(-f_face))

    @property
    def volume(self) -> float:
        return float(self.cell.sum())


# ---------------------------------------------------------------------------
# discrete calculus on a profile


class Calculus:
    """Difference operators bound to one profile (4th order, parity ghosts)."""

    def __init__(self, profile: WarpedProfile):
        self.profile = profile
        M, h, n = profile.M, profile.h, profile.n
        S = _unit_stencils(M)
        self.n = n
        self.h = h
        self.D1e = S["d1_even"] / h
        self.D1o = S["d1_odd"] / h
        self.D2e = S["d2_even"] / h**2
        self.D2o = S["d2_odd"] / h**2
        self.C2Fe = S["c2f_even"]
        self.C2Fo = S["c2f_odd"]
        self.F2Cd = S["f2c_diff"] / h
        self.F2Ci = S["f2c_interp"]
        phi, alpha = profile.phi, profile.alpha
        self.alpha_face = (self.C2Fe @ alpha)[1:-1]
        self.phi_face = (self.C2Fo @ phi)[1:-1]
        # d/ds on even centre values, landing on interior faces
        self.G = S["grad"] / h / self.alpha_face[:, None]
        self.phi_s = (self.D1o @ phi) / alpha
        self.psi = self.phi_s / phi
        phi_r = self.D1o @ phi
        self.phi_ss = (self.D2o @ phi) / alpha**2 - phi_r * (self.D1e @ alpha) / alpha**3

    # scalar calculus (strong form)
    def ds(self, u):
        return (self.D1e @ u) / self.profile.alpha

    def dss(self, u):
        a = self.profile.alpha
        return (self.D2e @ u) / a**2 - (self.D1e @ u) * (self.D1e @ a) / a**3

    def laplacian_matrix(self, f=None):
        """Positive Laplacian -(d_ss + (n-1) psi d_s), plus drift f_s d_s if f given."""
        a = self.profile.alpha
        da = self.D1e @ a
        Ds = self.D1e / a[:, None]
        Dss = self.D2e / a[:, None] ** 2 - (da / a**3)[:, None] * self.D1e
        L = -(Dss + ((self.n - 1) * self.psi)[:, None] * Ds)
        if f is not None:
            L = L + (self.ds(f))[:, None] * Ds
        return L

    def hessian(self, u):
        """Invariant Hessian of an even function, components (u_ss, psi u_s)."""
        return self.dss(u), self.psi * self.ds(u)

    def face_values(self, u):
        return (self.C2Fe @ u)[1:-1]

    # one-forms c dr on interior faces
    def sym_grad(self, c):
        """delta^* of the one-form c ds: (c_s, psi c) at centres."""
        return (self.F2Cd @ c) / self.profile.alpha, self.psi * (self.F2Ci @ c)


def calculus(profile: WarpedProfile) -> Calculus:
    return Calculus(profile)


def quadrature(profile: WarpedProfile) -> Quadrature:
    n, M, h = profile.n, profile.M, profile.h
    wc, wf = _unit_weights(M, n % 2 == 0)
    om = sphere_volume(n - 1)
    calc_face_alpha = (_unit_stencils(M)["c2f_even"] @ profile.alpha)[1:-1]
    calc_face_phi = (_unit_stencils(M)["c2f_odd"] @ profile.phi)[1:-1]
    cell = h * wc * om * profile.alpha * profile.phi ** (n - 1)
    face = h * wf * om * calc_face_alpha * calc_face_phi ** (n - 1)
    return Quadrature(cell, face)


def _pole_integral(profile: WarpedProfile, g: np.ndarray, K: int = 4) -> np.ndarray:
    """Integral of g ds from the nearer pole to each centre, for g odd about both poles.

    The first K centres use the odd polynomial interpolating g there; beyond
    them Simpson's rule on (face, centre, face) values takes over.
    """
    M, h = profile.M, profile.h
    ga = g * profile.alpha
    gf = _unit_stencils(M)["c2f_odd"] @ ga

    def from_left(ga, gf):
        r = (np.arange(K) + 0.5) * h
        powers = np.arange(1, 2 * K, 2)
        coef = np.linalg.solve(r[:, None] ** powers[None, :], ga[:K])
        out = np.empty(M)
        out[:K] = (r[:, None] ** (powers + 1)[None, :] / (powers + 1)) @ coef
        right = h * (5 * gf[K:M] + 8 * ga[K - 1:M - 1] - gf[K - 1:M - 1]) / 24
        left = h * (5 * gf[K:M] + 8 * ga[K:] - gf[K + 1:]) / 24
        out[K:] = out[K - 1] + np.cumsum(right + left)
        return out

    lq = from_left(ga, gf)
    # the far pole: reflect, integrate, and flip the orientation
    rq = -from_left(ga[::-1], gf[::-1])[::-1]
    out = lq
    out[M // 2:] = rq[M // 2:]
    return out


def curvature(profile: WarpedProfile) -> CurvaturePack:
    """Sectional curvatures and Ricci/scalar curvature of a smooth profile.

    K_sph = (1 - phi_s^2)/phi^2 has its numerator computed as the integral of
    its derivative -2 phi_s phi_ss from the nearer pole, where phi_s = +-1 for a
    smooth closure.  Differencing phi_s^2 directly would divide an O(h^4)
    truncation error by phi^2 ~ h^2 next to the poles.
    """
    calc = Calculus(profile)
    n, phi = profile.n, profile.phi
    k_rad = -calc.phi_ss / phi
    k_sph = _pole_integral(profile, -2.0 * calc.phi_s * calc.phi_ss) / phi**2
    ric_rr = (n - 1) * k_rad
    ric_sph = k_rad + (n - 2) * k_sph
    scal = 2 * (n - 1) * k_rad + (n - 1) * (n - 2) * k_sph
    return CurvaturePack(k_rad, k_sph, ric_rr, ric_sph, scal)


def _values(u):
    return u.values if isinstance(u, ScalarProfile) else np.asarray(u, dtype=float)


def integrate(u, quad: Quadrature) -> float:
    v = _values(u)
    if v.shape != quad.cell.shape:
        raise GeometryError(f"grid mismatch: {v.shape} vs {quad.cell.shape}")
    return float(quad.cell @ v)


def norms(u, profile: WarpedProfile, weight=None) -> dict:
    """Discrete L2, H1, H2 and sup norms of a function or invariant 2-tensor.

    ``u`` is a ScalarProfile/array, or a pair (a, b) of tensor components.
    With ``weight=f`` the integrals use the density e^{-f}.
    """
    calc = Calculus(profile)
    quad = quadrature(profile)
    if weight is not None:
        quad = quad.weighted(_values(weight))
    n = profile.n
    if isinstance(u, tuple):
        a, b = (np.asarray(x, dtype=float) for x in u)
        if a.shape != quad.cell.shape or b.shape != quad.cell.shape:
            raise GeometryError("grid mismatch")
        pt = a**2 + (n - 1) * b**2
        da, db = calc.ds(a), calc.ds(b)
        g1 = da**2 + (n - 1) * db**2 + 2 * (n - 1) * calc.psi**2 * (a - b) ** 2
        g2 = calc.dss(a) ** 2 + (n - 1) * calc.dss(b) ** 2
        sup = float(max(np.max(np.abs(a)), np.max(np.abs(b)))) if a.size else 0.0
    else:
        v = _values(u)
        if v.shape != quad.cell.shape:
            raise GeometryError("grid mismatch")
        pt = v**2
        dv = calc.ds(v)
        g1 = dv**2
        hs, hb = calc.hessian(v)
        g2 = hs**2 + (n - 1) * hb**2
        sup = float(np.max(np.abs(v)))
    l2sq = max(float(quad.cell @ pt), 0.0)
    h1sq = l2sq + max(float(quad.cell @ g1), 0.0)
    h2sq = h1sq + max(float(quad.cell @ g2), 0.0)
    return {"L2": math.sqrt(l2sq), "H1": math.sqrt(h1sq), "H2": math.sqrt(h2sq), "sup": sup}


def c2_norm(a, b, profile: WarpedProfile) -> float:
    """Discrete C^2 norm of an invariant 2-tensor (stand-in for C^{2,alpha})."""
    calc = Calculus(profile)
    parts = [a, b, calc.ds(a), calc.ds(b), calc.dss(a), calc.dss(b)]
    return float(sum(np.max(np.abs(p)) for p in parts))


# ---------------------------------------------------------------------------
# delimited text I/O


def write_profile(profile: WarpedProfile, path) -> None:
    """Header ``n M L`` then one ``r phi`` row per cell centre (17 digits)."""
    if not profile.is_arclength:
        raise GeometryError("only arclength profiles are exported")
    lines = [f"# n={profile.n} M={profile.M} L={profile.L!r}", "r,phi"]
    for r, p in zip(profile.r, profile.phi):
        lines.append(f"{r:.17g},{p:.17g}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_profile(path) -> WarpedProfile:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise GeometryError("missing profile header")
    meta = dict(tok.split("=", 1) for tok in text[0][1:].split())
    n, M, L = int(meta["n"]), int(meta["M"]), float(meta["L"])
    rows = [ln.split(",") for ln in text[2:] if ln.strip()]
    if len(rows) != M:
        raise GeometryError(f"expected {M} rows, found {len(rows)}")
    r = np.array([float(x[0]) for x in rows])
    phi = np.array([float(x[1]) for x in rows])
    prof = WarpedProfile(n, L, phi)
    if np.max(np.abs(r - prof.r)) > 1e-12 * L:
        raise GeometryError("rows are not on the uniform cell-centred grid")
    return prof
