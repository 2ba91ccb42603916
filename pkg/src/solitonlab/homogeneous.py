"""Diagonal metrics on products of Einstein manifolds.

A metric ``g = sum_i x_i g_i`` on ``M_1 x ... x M_k`` with ``Ric(g_i) = mu_i g_i``
is homogeneous enough that the entropy minimiser f is constant, so every
quantity of interest has a closed form in the scales ``x_i``.  This module
is used as an exact oracle for the warped-profile backend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

SOLITON_RTOL = 1e-12


class HomogeneousError(ValueError):
    pass


@dataclass(frozen=True)
class EinsteinFactor:
    n: int
    mu: float
    volume: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise HomogeneousError(f"factor dimension must be an integer >= 2, got {self.n}")
        if not self.mu > 0:
            raise HomogeneousError(f"Einstein constant must be positive, got {self.mu}")
        if not self.volume > 0:
            raise HomogeneousError(f"reference volume must be positive, got {self.volume}")

    @classmethod
    def sphere(cls, n: int, radius: float = 1.0) -> "EinsteinFactor":
        """Round sphere of the given radius as the reference metric g_i."""
        from .geometry import sphere_volume

        return cls(n, (n - 1) / radius**2, sphere_volume(n) * radius**n)


@dataclass(frozen=True)
class HomogeneousMetric:
    factors: tuple
    x: np.ndarray = field(compare=False)

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(self.factors))
        x = np.array(self.x, dtype=float)
        if x.shape != (len(self.factors),):
            raise HomogeneousError("one scale per factor is required")
        if not np.all(np.isfinite(x)) or np.any(x <= 0):
            raise HomogeneousError(f"scales must be positive, got {x}")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def k(self) -> int:
        return len(self.factors)

    @property
    def dims(self) -> np.ndarray:
        return np.array([f.n for f in self.factors], dtype=float)

    @property
    def mus(self) -> np.ndarray:
        return np.array([f.mu for f in self.factors], dtype=float)

    @property
    def n(self) -> int:
        return int(sum(f.n for f in self.factors))

    def with_scales(self, x) -> "HomogeneousMetric":
        return HomogeneousMetric(self.factors, x)

    def scal(self) -> float:
        return float(np.sum(self.dims * self.mus / self.x))

    def volume(self) -> float:
        logv = sum(math.log(f.volume) + 0.5 * f.n * math.log(xi) for f, xi in zip(self.factors, self.x))
        return math.exp(logv)

    def log_volume(self) -> float:
        return float(sum(math.log(f.volume) + 0.5 * f.n * math.log(xi) for f, xi in zip(self.factors, self.x)))

    def ricci_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of Ric relative to g on each factor, mu_i / x_i."""
        return self.mus / self.x

    def max_curvature(self) -> float:
        return float(np.max(np.abs(self.ricci_eigenvalues())))


@dataclass
class EquivariantCertificate:
    """Entropy data for the constant-f minimiser; residuals vanish identically."""

    metric: HomogeneousMetric
    tau: float
    nu: float
    f: float
    residual_el1: float = 0.0
    residual_el2: float = 0.0
    residual_constraint: float = 0.0
    iterations: int = 0
    converged: bool = True

    def to_dict(self) -> dict:
        return {
            "x": self.metric.x.tolist(),
            "nu": self.nu,
            "tau": self.tau,
            "f": self.f,
            "residual_el1": self.residual_el1,
            "residual_el2": self.residual_el2,
            "residual_constraint": self.residual_constraint,
            "converged": self.converged,
        }


def product(*factors, x=None) -> HomogeneousMetric:
    x = np.ones(len(factors)) if x is None else x
    return HomogeneousMetric(tuple(factors), x)


def equivariant_entropy(m: HomogeneousMetric) -> EquivariantCertificate:
    """nu restricted to constant f, in closed form."""
    scal = m.scal()
    if scal <= 0:
        raise HomogeneousError("entropy undefined on this branch: scal <= 0")
    n = m.n
    tau = n / (2.0 * scal)
    fstar = m.log_volume() - 0.5 * n * math.log(4.0 * math.pi * tau)
    return EquivariantCertificate(m, tau, fstar - 0.5 * n, fstar)


def flow_rhs(m: HomogeneousMetric, kind: str = "tau") -> np.ndarray:
    """Scale velocities for the tau-flow or the volume-normalised Ricci flow."""
    if kind == "tau":
        tau = equivariant_entropy(m).tau
        return -2.0 * m.mus + m.x / tau
    if kind == "normalized":
        return -2.0 * m.mus + (2.0 / m.n) * m.scal() * m.x
    if kind == "modified":
        # f is constant, so the Hessian term vanishes
        return flow_rhs(m, "tau")
    raise ValueError(f"unknown flow kind {kind!r}")


def soliton_defect(m: HomogeneousMetric) -> float:
    """max_i |x_i - 2 tau mu_i|, zero exactly at the soliton."""
    tau = equivariant_entropy(m).tau
    return float(np.max(np.abs(m.x - 2.0 * tau * m.mus)))


def is_soliton(m: HomogeneousMetric, rtol: float = SOLITON_RTOL) -> bool:
    return soliton_defect(m) < rtol * float(np.max(m.x))


def soliton_residual(m: HomogeneousMetric) -> float:
    """Weighted L2 norm of tau Ric - g/2 (f constant), normalised by (4 pi tau)^{-n/2}.

    Pointwise |tau Ric - g/2|^2 = sum_i n_i (tau mu_i/x_i - 1/2)^2, and with the
    normalised density the weighted integral of a constant is that constant.
    """
    tau = equivariant_entropy(m).tau
    d = tau * m.mus / m.x - 0.5
    return float(math.sqrt(np.sum(m.dims * d * d)))


def first_variation(m: HomogeneousMetric, c) -> float:
    """nu'(h) for h = sum c_i g_i."""
    c = np.asarray(c, dtype=float)
    tau = equivariant_entropy(m).tau
    # <tau Ric - g/2, h> = sum n_i (tau mu_i/x_i - 1/2) c_i / x_i
    return -float(np.sum(m.dims * (tau * m.mus / m.x - 0.5) * c / m.x))


def gram(m: HomogeneousMetric) -> np.ndarray:
    """Normalised weighted Gram matrix of the g_i: n_i / x_i^2 on the diagonal."""
    return np.diag(m.dims / m.x**2)


@dataclass
class HomogeneousSpectrum:
    matrix: np.ndarray
    eigenvalues: np.ndarray
    basis: np.ndarray
    classification: str
    kernel_dim: int

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "classification": self.classification,
            "kernel_dim": self.kernel_dim,
        }


def classify(eigenvalues, neutral=1e-6) -> tuple:
    ev = np.asarray(eigenvalues, dtype=float)
    kernel = int(np.sum(np.abs(ev) < neutral))
    if ev.size and np.max(ev) >= neutral:
        return "linearly unstable", kernel
    if kernel:
        return "neutrally linearly stable", kernel
    return "linearly stable", kernel


def stability_matrix(m: HomogeneousMetric, neutral=1e-6) -> HomogeneousSpectrum:
    """N = R-ring on span{g_i} intersected with V, in a weighted-orthonormal basis.

    The Laplacian term vanishes on parallel tensors and the divergence
    condition holds automatically, so V is cut out by the single condition
    sum n_i mu_i c_i / x_i^2 = 0.
    """
    if not is_soliton(m):
        raise HomogeneousError("second variation only defined at critical points (metric is not a soliton)")
    x, nd, mus = m.x, m.dims, m.mus
    # orthonormal coordinates y_i = sqrt(n_i) c_i / x_i
    constraint = (np.sqrt(nd) * mus / x)[None, :]
    basis = sla.null_space(constraint)
    if basis.shape[1] == 0:
        return HomogeneousSpectrum(np.zeros((0, 0)), np.zeros(0), np.zeros((m.k, 0)), "linearly stable", 0)
    A = basis.T @ np.diag(mus / x) @ basis
    A = 0.5 * (A + A.T)
    ev, vec = np.linalg.eigh(A)
    coeffs = (basis @ vec) * (x / np.sqrt(nd))[:, None]
    label, kernel = classify(ev, neutral)
    return HomogeneousSpectrum(A, ev, coeffs, label, kernel)


def generic_stability_matrix(m: HomogeneousMetric, step: float = 1e-3, neutral=1e-6) -> HomogeneousSpectrum:
    """Spectrum of N on V from a finite-difference Hessian of nu, without the closed form.

    nu'' = tau <N h, h> on V, so N solves Hess c = tau lambda G c restricted to
    the G-orthogonal complement of g (which is V at a soliton).
    """
    if not is_soliton(m):
        raise HomogeneousError("second variation only defined at critical points (metric is not a soliton)")
    k, x = m.k, m.x
    tau = equivariant_entropy(m).tau
    d = step * x
    nu = lambda dx: equivariant_entropy(m.with_scales(x + dx)).nu  # noqa: E731
    H = np.zeros((k, k))
    for i in range(k):
        for j in range(i, k):
            ei = np.eye(k)[i] * d[i]
            ej = np.eye(k)[j] * d[j]
            H[i, j] = H[j, i] = (nu(ei + ej) - nu(ei - ej) - nu(ej - ei) + nu(-ei - ej)) / (4.0 * d[i] * d[j])
    G = gram(m)
    basis = sla.null_space((G @ x)[None, :])
    if basis.shape[1] == 0:
        return HomogeneousSpectrum(np.zeros((0, 0)), np.zeros(0), np.zeros((k, 0)), "linearly stable", 0)
    A = basis.T @ H @ basis / tau
    B = basis.T @ G @ basis
    ev, vec = sla.eigh(0.5 * (A + A.T), B)
    label, kernel = classify(ev, neutral)
    return HomogeneousSpectrum(A, ev, basis @ vec, label, kernel)


def second_variation(m: HomogeneousMetric, c) -> float:
    """Closed-form nu''(h) = tau <N h, h> at the soliton for h in V."""
    c = np.asarray(c, dtype=float)
    if not is_soliton(m):
        raise HomogeneousError("second variation only defined at critical points (metric is not a soliton)")
    tau = equivariant_entropy(m).tau
    return tau * float(np.sum(m.mus / m.x * m.dims * c * c / m.x**2))


def soliton_point(factors, tau: float = 0.5) -> HomogeneousMetric:
    mus = np.array([f.mu for f in factors], dtype=float)
    return HomogeneousMetric(tuple(factors), 2.0 * tau * mus)
