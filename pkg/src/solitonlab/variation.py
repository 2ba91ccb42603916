"""Finite-difference checks of the variations of nu and Lojasiewicz fits.

Every check evaluates nu along the segment g + t h, differentiates by central
differences at two step sizes, and Richardson-extrapolates.  Step sizes are
scaled so that t |h|_sup equals the requested base step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import homogeneous as hom
from .entropy import EntropyCertificate, EntropyError, minimize_nu
from .geometry import Calculus, ScalarProfile, WarpedProfile, c2_norm, quadrature
from .stability import (
    InvariantSymTensor,
    assemble_N_full,
    soliton_defect,
)

DEFAULT_STEP = 1e-3
NU_TOL = 1e-10
# third differences need a wider stencil to rise above the entropy noise
THIRD_STEP = 1e-2


class VariationError(RuntimeError):
    pass


@dataclass
class VariationReport:
    order: int
    analytic: float
    fd: float
    steps: tuple
    fd_values: tuple
    richardson: float
    relative_error: float
    errors: tuple = ()
    probes: dict = field(default_factory=dict)

    @property
    def improvement(self) -> float:
        """Ratio of FD-vs-analytic discrepancies at the coarse and the halved step."""
        if len(self.errors) < 2 or self.errors[1] == 0.0:
            return math.inf
        return self.errors[0] / self.errors[1]

    def passed(self, rtol, atol=0.0) -> bool:
        return abs(self.richardson - self.analytic) <= max(atol, rtol * abs(self.analytic))

    def to_dict(self) -> dict:
        return {
            "order": self.order,
            "analytic": self.analytic,
            "fd": self.fd,
            "steps": list(self.steps),
            "fd_values": list(self.fd_values),
            "richardson": self.richardson,
            "relative_error": self.relative_error,
            "errors": list(self.errors),
            "probes": {repr(k): v for k, v in self.probes.items()},
        }


# ---------------------------------------------------------------------------
# nu along a segment


def _sup(h) -> float:
    if isinstance(h, InvariantSymTensor):
        return float(max(np.max(np.abs(h.a)), np.max(np.abs(h.b))))
    return float(np.max(np.abs(h)))


class _Segment:
    """Cached nu(g + t h) for a warped profile or a homogeneous metric."""

    def __init__(self, metric, h, start=None, tol=NU_TOL):
        self.metric, self.h, self.tol = metric, h, tol
        self.start = start
        self.cache = {}

    def __call__(self, t: float) -> float:
        key = round(t, 15)
        if key in self.cache:
            return self.cache[key]
        if isinstance(self.metric, hom.HomogeneousMetric):
            x = self.metric.x + t * np.asarray(self.h, dtype=float)
            val = hom.equivariant_entropy(self.metric.with_scales(x)).nu
        else:
            g = self.metric.perturbed(self.h.a, self.h.b, t) if t != 0.0 else self.metric
            try:
                cert = minimize_nu(g, tol=self.tol, start=self.start)
            except EntropyError as exc:
                raise VariationError(f"entropy solve failed at t={t:.3e}: {exc}") from exc
            val = cert.nu
        self.cache[key] = val
        return val


def _relative(value, reference) -> float:
    scale = abs(reference)
    return abs(value - reference) / scale if scale > 0 else abs(value - reference)


def _report(order, analytic, steps, fds, factor, probes) -> VariationReport:
    rich = fds[1] + (fds[1] - fds[0]) / (factor - 1.0)
    errs = tuple(abs(v - analytic) for v in fds)
    return VariationReport(order, float(analytic), float(fds[-1]), tuple(steps), tuple(fds),
                           float(rich), _relative(rich, analytic), errs, probes)


def _steps(h, step):
    t0 = step / max(_sup(h), 1e-300)
    return (t0, 0.5 * t0)


# ---------------------------------------------------------------------------
# first variation


def random_tensor(profile: WarpedProfile, rng, modes: int = 6) -> InvariantSymTensor:
    """Smooth random invariant tensor with decaying cosine coefficients.

    b carries the even modes and a = b + sin^2 r (...) so that a - b vanishes
    to second order at the poles, as smoothness of h requires.
    """
    r = profile.r * (math.pi / profile.L)
    u = sum(rng.normal() * np.cos(k * r) / (1 + k) for k in range(modes))
    d = np.sin(r) ** 2 * sum(rng.normal() * np.cos(k * r) / (1 + k) for k in range(max(modes - 2, 1)))
    return InvariantSymTensor(u + d, u)


def first_variation(cert: EntropyCertificate, h: InvariantSymTensor) -> float:
    """-(4 pi tau)^{-n/2} int <tau(Ric + Hess f) - g/2, h> e^{-f} dV."""
    n = cert.profile.n
    T = soliton_defect(cert)
    q = quadrature(cert.profile).cell * np.exp(-cert.f.values)
    c = (4.0 * math.pi * cert.tau) ** (-n / 2.0)
    return -c * float(q @ (T.a * h.a + (n - 1) * T.b * h.b))


def check_first_variation(metric, h, step=DEFAULT_STEP, certificate=None) -> VariationReport:
    """Central FD of nu at two steps against the first-variation pairing."""
    if isinstance(metric, hom.HomogeneousMetric):
        analytic = hom.first_variation(metric, h)
        seg = _Segment(metric, h)
    else:
        cert = certificate or minimize_nu(metric, tol=NU_TOL)
        analytic = first_variation(cert, h)
        seg = _Segment(metric, h, start=cert)
    steps = _steps(h, step)
    fds = [(seg(t) - seg(-t)) / (2.0 * t) for t in steps]
    return _report(1, analytic, steps, fds, 4.0, dict(seg.cache))


# ---------------------------------------------------------------------------
# second variation


def second_variation(cert, h) -> float:
    """tau (4 pi tau)^{-n/2} <N h, h>_w with N the full second-variation operator."""
    if isinstance(cert, hom.HomogeneousMetric):
        return hom.second_variation(cert, h)
    n = cert.profile.n
    N = assemble_N_full(cert)
    return cert.tau * (4.0 * math.pi * cert.tau) ** (-n / 2.0) * N.pair(h, h)


def check_second_variation(cert, h, step=DEFAULT_STEP, operator=None) -> VariationReport:
    """Second central difference of nu against the second-variation form.

    ``cert`` is an entropy certificate at a warped soliton or a homogeneous
    soliton metric; ``operator`` may carry a pre-assembled N to share across
    many directions.
    """
    if isinstance(cert, hom.HomogeneousMetric):
        analytic = hom.second_variation(cert, h)
        seg = _Segment(cert, h)
    else:
        n = cert.profile.n
        N = operator if operator is not None else assemble_N_full(cert)
        analytic = cert.tau * (4.0 * math.pi * cert.tau) ** (-n / 2.0) * N.pair(h, h)
        seg = _Segment(cert.profile, h, start=cert)
        seg.cache[0.0] = cert.nu
    steps = _steps(h, step)
    fds = [(seg(t) - 2.0 * seg(0.0) + seg(-t)) / (t * t) for t in steps]
    return _report(2, analytic, steps, fds, 4.0, dict(seg.cache))


# ---------------------------------------------------------------------------
# third variation


def h1_norm_sq(h: InvariantSymTensor, profile: WarpedProfile) -> float:
    """int |h|^2 + |grad h|^2 dV for an invariant tensor a ds^2 + b phi^2 g_round."""
    n = profile.n
    calc = Calculus(profile)
    q = quadrature(profile).cell
    grad = calc.ds(h.a) ** 2 + (n - 1) * calc.ds(h.b) ** 2 + 2 * (n - 1) * (calc.psi * (h.a - h.b)) ** 2
    return float(q @ (h.a**2 + (n - 1) * h.b**2 + grad))


@dataclass
class ThirdVariationProbe:
    amplitudes: tuple
    third: tuple
    ratios: tuple
    h1_sq: tuple
    c2: tuple
    noise_floor: float

    @property
    def spread(self) -> float:
        r = np.abs(np.asarray(self.ratios))
        return float((r.max() - r.min()) / r.max()) if r.max() > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "amplitudes": list(self.amplitudes),
            "third": list(self.third),
            "ratios": list(self.ratios),
            "h1_sq": list(self.h1_sq),
            "c2": list(self.c2),
            "noise_floor": self.noise_floor,
            "spread": self.spread,
        }


def third_derivative(profile: WarpedProfile, h: InvariantSymTensor, step=THIRD_STEP, start=None):
    """d^3/dt^3 nu(g + t h) at 0, Richardson over two steps; also an FD noise estimate."""
    if _sup(h) == 0.0:
        return 0.0, 0.0
    seg = _Segment(profile, h, start=start)
    vals = []
    for t in _steps(h, 2.0 * step):
        vals.append((seg(2 * t) - 2 * seg(t) + 2 * seg(-t) - seg(-2 * t)) / (2.0 * t**3))
    rich = vals[1] + (vals[1] - vals[0]) / 3.0
    noise = 6.0 * NU_TOL / (2.0 * _steps(h, 2.0 * step)[1] ** 3)
    return float(rich), float(noise)


def third_variation_bound_probe(profile: WarpedProfile, h: InvariantSymTensor,
                                amplitudes=(1e-2, 2e-2, 4e-2), step=THIRD_STEP) -> ThirdVariationProbe:
    """|nu'''(eps h)| / (|eps h|_{H1}^2 |eps h|_{C2}) across amplitudes of one shape."""
    start = minimize_nu(profile, tol=NU_TOL)
    third, ratios, h1s, c2s = [], [], [], []
    noise = 0.0
    for eps in amplitudes:
        he = h * eps
        d3, nz = third_derivative(profile, he, step, start)
        n1 = h1_norm_sq(he, profile)
        n2 = c2_norm(he.a, he.b, profile)
        third.append(d3)
        h1s.append(n1)
        c2s.append(n2)
        ratios.append(abs(d3) / (n1 * n2) if n1 * n2 > 0 else 0.0)
        noise = max(noise, nz)
    return ThirdVariationProbe(tuple(amplitudes), tuple(third), tuple(ratios), tuple(h1s), tuple(c2s), noise)


# ---------------------------------------------------------------------------
# obstruction integral


def obstruction_integral(cert: EntropyCertificate, v, tol=1e-6) -> float:
    """(2n - 2)/vol int v^3 dV for an eigenfunction with Delta v = 2 mu v."""
    profile = cert.profile
    n = profile.n
    vals = v.values if isinstance(v, ScalarProfile) else np.asarray(v, dtype=float)
    mu = 1.0 / (2.0 * cert.tau)
    lap = Calculus(profile).laplacian_matrix() @ vals
    defect = float(np.max(np.abs(lap - 2.0 * mu * vals)))
    if not defect <= tol * max(float(np.max(np.abs(vals))), 1e-300):
        raise VariationError(
            f"not an ISD generator: |Delta v - 2 mu v|_sup = {defect:.3e} exceeds {tol:g} |v|_sup")
    q = quadrature(profile)
    return (2 * n - 2) / q.volume * float(q.cell @ vals**3)


def tabulated_integral(v, profile: WarpedProfile) -> float:
    """(2n - 2)/vol int v^3 dV without the eigenfunction precondition."""
    q = quadrature(profile)
    return (2 * profile.n - 2) / q.volume * float(q.cell @ np.asarray(v, dtype=float) ** 3)


# ---------------------------------------------------------------------------
# Lojasiewicz exponent


@dataclass
class LojasiewiczFit:
    sigma: float
    C: float
    window: tuple
    fit_residual: float
    samples: int
    time_exponent: float | None
    time_rate: float | None
    predicted_time_exponent: float
    pointwise_ok: bool
    max_pointwise_ratio: float
    note: str = ""

    def to_dict(self) -> dict:
        return dict(self.__dict__, window=list(self.window))


MIN_TAIL = 20


def fit_lojasiewicz(trajectory, limit=None, window=None, floor=1e-9, tail_fraction=0.03,
                    margin=0.1) -> LojasiewiczFit:
    """Fit |nu - nu_inf|^sigma = C residual on the tail of a converged trajectory.

    ``limit`` supplies nu_inf (an entropy certificate or a number) and
    defaults to the final nu.  The tail keeps samples whose residual is at
    most ``tail_fraction`` times the initial one (or lies inside ``window``)
    and whose entropy gap exceeds ``floor``, which keeps the solver noise in
    nu out of the regression.  The slope of log residual against
    log |nu - nu_inf| is sigma and the intercept gives C.
    """
    status = getattr(trajectory, "status", "converged")
    if status != "converged":
        raise VariationError(f"trajectory did not converge (status {status!r})")
    t = np.asarray(trajectory.t, dtype=float)
    nu = np.asarray(trajectory.nu, dtype=float)
    res = np.asarray(trajectory.residual, dtype=float)
    nu_inf = float(nu[-1]) if limit is None else float(getattr(limit, "nu", limit))
    gap = np.abs(nu - nu_inf)
    keep = (gap > floor) & (res > 0)
    if window is not None:
        keep &= (res >= window[0]) & (res <= window[1])
    else:
        keep &= res <= tail_fraction * res[0]
    if int(keep.sum()) < MIN_TAIL:
        raise VariationError(f"insufficient data: {int(keep.sum())} tail samples, need {MIN_TAIL}")
    x = np.log(gap[keep])
    y = np.log(res[keep])
    sigma, intercept = np.polyfit(x, y, 1)
    fit_res = float(np.sqrt(np.mean((y - (sigma * x + intercept)) ** 2)))
    C = float(math.exp(-intercept))
    ratio = gap[keep] ** sigma / (C * res[keep])
    pointwise = bool(np.all(ratio <= 1.0 + margin))
    predicted = float(1.0 / (2.0 * sigma - 1.0)) if sigma > 0.5 + 1e-12 else math.inf
    tk = t[keep]
    time_exp = time_rate = None
    if np.ptp(tk) > 0:
        time_exp = float(-np.polyfit(np.log(tk + 1.0), x, 1)[0])
        time_rate = float(-np.polyfit(tk, x, 1)[0])
    note = ""
    if abs(sigma - 0.5) < 0.05:
        note = ("sigma near 1/2 as expected for a nondegenerate critical point "
                "(a model assumption); the decay in time is then exponential")
    lo, hi = float(res[keep].min()), float(res[keep].max())
    return LojasiewiczFit(float(sigma), C, (lo, hi), fit_res, int(keep.sum()), time_exp, time_rate,
                          predicted, pointwise, float(ratio.max()), note)


@dataclass
class SyntheticTrajectory:
    t: list
    nu: list
    residual: list
    status: str = "converged"


def synthetic_trajectory(sigma=0.6, C=1.0, nu_inf=0.0, samples=60, smallest_gap=1e-8) -> SyntheticTrajectory:
    """nu_inf - nu(t) = (t + 1)^{-1/(2 sigma - 1)} and residual = |nu - nu_inf|^sigma / C.

    Sample times are spaced evenly in log of the entropy gap, from 1 down to
    ``smallest_gap``, so every sigma gets the same coverage of the tail.
    """
    if not 0.5 < sigma < 1.0:
        raise ValueError("synthetic power law needs sigma in (1/2, 1)")
    gap = np.geomspace(1.0, smallest_gap, samples)
    t = gap ** (-(2.0 * sigma - 1.0)) - 1.0
    nu = nu_inf - gap
    res = gap**sigma / C
    # the limit itself closes the trajectory
    return SyntheticTrajectory(list(t) + [t[-1] * 10], list(nu) + [nu_inf], list(res) + [0.0])
