"""First-order Duhamel pipeline for the quadratic normal-form model.

A contact structure near a point is normalised, to second order, by the frame

    f1 = d/dx - (y/2)(1 + gamma) d/dw,   f2 = d/dy + (x/2)(1 + gamma) d/dw,

with gamma(x, y) = a x^2 + b x y + c y^2.  Writing the sub-Laplacian of that
frame as the flat operator plus a perturbation and expanding its heat
semigroup by Duhamel's formula, the first correction to the on-diagonal
density at time 1 is the convolution

    K1 = int_0^1 int_{R^3} h_s(q) * (Y h_{1-s})(q) dq ds,

where h is the flat kernel and Y the quadratic perturbation operator
(`heisenberg.y_applied_kernel`).  This module estimates K1 by Monte Carlo:

* the inner integral is an expectation over q ~ h_s, sampled exactly in law
  (up to time discretization) by running the flat diffusion to time s — this
  removes the s -> 0 endpoint singularity, since the kernel factor is a
  probability density;
* the s-integral is stratified towards s = 1 with boundaries 1 - 2^{-k},
  because Y h_{1-s} blows up like (1-s)^{-2} there.  On the final stratum even
  a stratified uniform draw of s has infinite variance (the integrand's
  second moment fails to converge), so there — and only there — s is fixed at
  the two-point Gauss-Legendre nodes of the stratum and only q is sampled.

No constant is calibrated from outside: the pipeline produces K1 ab initio,
and comparisons against closed forms live in the tests.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from . import geometry
from .diffusion import compile_sde, integrate_heun
from .geometry import Frame, VectorField, heisenberg_frame
from .heisenberg import y_applied_kernel_batch
from .quadrature import integrate_adaptive

logger = logging.getLogger(__name__)

__all__ = [
    "QuadraticModel",
    "DuhamelEstimate",
    "ExpansionCheck",
    "NonFiniteIntegrandError",
    "StratumStarvationError",
    "model_frame",
    "epsilon_expansion_check",
    "duhamel_k1",
    "collapsed_k1",
    "predicted_expansion",
    "scaling_bridge",
]

ORIGIN = (0.0, 0.0, 0.0)


class NonFiniteIntegrandError(ArithmeticError):
    """A perturbation-integrand sample came back nan/inf."""


class StratumStarvationError(RuntimeError):
    """A stratum ended with too few surviving samples to average."""


@dataclass(frozen=True)
class QuadraticModel:
    """Coefficients of the normal-form quadratic gamma = a x^2 + b x y + c y^2."""

    a: float
    b: float
    c: float

    @property
    def predicted_chi(self) -> float:
        return 2.0 * math.hypot(self.b, self.c - self.a)

    @property
    def predicted_kappa(self) -> float:
        return 2.0 * (self.a + self.c)

    def is_zero(self) -> bool:
        return self.a == 0.0 and self.b == 0.0 and self.c == 0.0


@dataclass(frozen=True)
class DuhamelEstimate:
    k1: float
    std_error: float
    n_samples: int
    s_strata: int

    def __post_init__(self):
        if self.std_error < 0:
            raise ValueError("standard error cannot be negative")


def _as_model(m) -> QuadraticModel:
    if isinstance(m, QuadraticModel):
        return m
    a, b, c = m
    return QuadraticModel(float(a), float(b), float(c))


def model_frame(m) -> Frame:
    """The normal-form frame of the quadratic model, as a geometry Frame."""
    m = _as_model(m)
    gamma = f"(({m.a!r})*x^2 + ({m.b!r})*x*y + ({m.c!r})*y^2)"
    f1 = VectorField("1", "0", f"-(y/2)*(1 + {gamma})")
    f2 = VectorField("0", "1", f"(x/2)*(1 + {gamma})")
    return Frame(f1, f2)


# ---------------------------------------------------------------------------
# dilation expansion of the model frame


@dataclass(frozen=True)
class ExpansionCheck:
    """Deviations of the eps-dilated frame from its second-order expansion.

    ``frame_deviation``: the dilated fields against f_hat_1 - eps^2 (y/2)
    gamma d/dw and f_hat_2 + eps^2 (x/2) gamma d/dw (exact for a quadratic
    gamma, so this is a floating-point zero).  ``c12_deviation``: the dilated
    structure constants against +-2 eps^2 (d gamma); the neglected remainder
    is O(eps^4).
    """

    eps: float
    frame_deviation: float
    c12_deviation: float

    @property
    def max_deviation(self) -> float:
        return max(self.frame_deviation, self.c12_deviation)


def _check_grid():
    xs = np.linspace(-0.25, 0.25, 5)
    return [(float(x), float(y), 0.0) for x in xs for y in xs]


def epsilon_expansion_check(m, eps: float) -> ExpansionCheck:
    """Compare the eps-dilated model frame with its quadratic expansion.

    At eps = 0 the dilation limit is the flat frame itself (computed through
    `geometry.nilpotent_approximation`), so both deviations are exact zeros.
    """
    m = _as_model(m)
    F = model_frame(m)
    eps = float(eps)
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps}")

    flat = heisenberg_frame()
    grid = _check_grid()

    def gamma(x, y):
        return m.a * x * x + m.b * x * y + m.c * y * y

    def dgamma(x, y):
        return (2 * m.a * x + m.b * y, m.b * x + 2 * m.c * y)

    if eps == 0.0:
        f1_lim = geometry.nilpotent_approximation(F.f1)
        f2_lim = geometry.nilpotent_approximation(F.f2)
        frame_dev = 0.0
        for q in grid:
            frame_dev = max(
                frame_dev,
                float(np.max(np.abs(f1_lim(q) - flat.f1(q)))),
                float(np.max(np.abs(f2_lim(q) - flat.f2(q)))),
            )
        return ExpansionCheck(eps=0.0, frame_deviation=frame_dev, c12_deviation=0.0)

    f1e = geometry.epsilon_approximation(F.f1, eps)
    f2e = geometry.epsilon_approximation(F.f2, eps)
    Fe = Frame(f1e, f2e)
    e2 = eps * eps

    frame_dev = 0.0
    c_dev = 0.0
    for q in grid:
        x, y, _ = q
        g = gamma(x, y)
        pred1 = np.array([1.0, 0.0, -(y / 2) * (1 + e2 * g)])
        pred2 = np.array([0.0, 1.0, (x / 2) * (1 + e2 * g)])
        frame_dev = max(
            frame_dev,
            float(np.max(np.abs(f1e(q) - pred1))),
            float(np.max(np.abs(f2e(q) - pred2))),
        )
        gx, gy = dgamma(x, y)
        sc = geometry.structure_constants(Fe, q)
        c_dev = max(
            c_dev,
            abs(sc.c12_1 - 2 * e2 * gy),
            abs(sc.c12_2 + 2 * e2 * gx),
        )
    return ExpansionCheck(eps=eps, frame_deviation=frame_dev, c12_deviation=c_dev)


# ---------------------------------------------------------------------------
# the Duhamel convolution K1

#: Stratonovich-Heun substeps per unit of diffusion time used when sampling
#: q ~ h_s.  The bias audit doubles this and requires the K1 shift < 1 sigma.
STEPS_PER_UNIT = 512

_GL2_OFFSETS = ((1 - 1 / math.sqrt(3)) / 2, (1 + 1 / math.sqrt(3)) / 2)


def _strata_edges(s_strata: int) -> np.ndarray:
    edges = [0.0] + [1.0 - 2.0 ** (-k) for k in range(1, s_strata)] + [1.0]
    return np.array(edges)


def _stratum_mean_var(m, rng, sde, s_values, tau_values, n_sub):
    """Sample q ~ h_s per path and average Y h_tau (q); returns (mean, var, n)."""
    pts, alive = integrate_heun(sde, ORIGIN, s_values, n_sub, rng)
    n_live = int(np.count_nonzero(alive))
    if n_live < 2:
        raise StratumStarvationError(
            f"only {n_live} of {len(s_values)} paths survived in a stratum")
    pts = pts[alive]
    tau = tau_values[alive]
    g = y_applied_kernel_batch(tau, pts[:, 0], pts[:, 1], pts[:, 2], m)
    if not np.all(np.isfinite(g)):
        raise NonFiniteIntegrandError(
            "perturbation integrand produced a non-finite sample")
    return float(g.mean()), float(g.var(ddof=1)), n_live


def duhamel_k1(
    m,
    n_samples: int = 100_000,
    s_strata: int = 8,
    seed: int = 0,
    *,
    steps_per_unit: int = STEPS_PER_UNIT,
    threads: int = 1,
) -> DuhamelEstimate:
    """Monte Carlo estimate of K1 = int_0^1 E_{q ~ h_s}[Y h_{1-s}(q)] ds.

    The s-axis is cut at 1 - 2^{-k} into ``s_strata`` strata with equal
    sample allocation.  Interior strata draw s uniformly; the final stratum
    (touching s = 1, where a uniform draw has infinite variance) fixes s at
    the stratum's two Gauss-Legendre nodes and spends its budget on q alone.
    Standard errors combine per-stratum variances; everything is
    deterministically seeded, so a fixed seed reproduces the estimate
    bit-for-bit for any thread count.
    """
    m = _as_model(m)
    if n_samples < 10_000:
        raise ValueError(f"n_samples must be at least 10^4, got {n_samples}")
    if s_strata < 2:
        raise ValueError(f"s_strata must be at least 2, got {s_strata}")
    if steps_per_unit < 64:
        raise ValueError(f"steps_per_unit must be at least 64, got {steps_per_unit}")
    if threads < 1:
        raise ValueError("threads must be at least 1")
    if m.is_zero():
        # Y vanishes identically: the estimator is exactly 0 with no spread.
        return DuhamelEstimate(0.0, 0.0, n_samples, s_strata)

    edges = _strata_edges(s_strata)
    base, extra = divmod(n_samples, s_strata)
    counts = [base + (1 if k < extra else 0) for k in range(s_strata)]
    streams = np.random.SeedSequence(seed).spawn(s_strata)
    sde = compile_sde(heisenberg_frame())

    def run_stratum(k: int):
        rng = np.random.default_rng(streams[k])
        lo, hi = edges[k], edges[k + 1]
        width = hi - lo
        if k < s_strata - 1:
            s_values = rng.uniform(lo, hi, counts[k])
            n_sub = max(64, math.ceil(steps_per_unit * hi))
            mean, var, n_live = _stratum_mean_var(
                m, rng, sde, s_values, 1.0 - s_values, n_sub)
            return width * mean, width * width * var / n_live
        # Final stratum: Gauss-Legendre in tau = 1 - s, Monte Carlo in q.
        contrib = 0.0
        var_term = 0.0
        half, rest = divmod(counts[k], 2)
        for j, offset in enumerate(_GL2_OFFSETS):
            tau_j = width * offset
            s_j = 1.0 - tau_j
            n_j = half + (rest if j == 0 else 0)
            s_values = np.full(n_j, s_j)
            n_sub = max(64, math.ceil(steps_per_unit * s_j))
            mean, var, n_live = _stratum_mean_var(
                m, rng, sde, s_values, np.full(n_j, tau_j), n_sub)
            node_weight = width / 2
            contrib += node_weight * mean
            var_term += node_weight * node_weight * var / n_live
        return contrib, var_term

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, s_strata)) as pool:
            results = list(pool.map(run_stratum, range(s_strata)))
    else:
        results = [run_stratum(k) for k in range(s_strata)]

    k1 = sum(c for c, _ in results)
    se = math.sqrt(sum(v for _, v in results))
    logger.info("K1 estimate %.6g +- %.2g (n=%d, strata=%d)",
                k1, se, n_samples, s_strata)
    return DuhamelEstimate(float(k1), float(se), n_samples, s_strata)


# ---------------------------------------------------------------------------
# deterministic cross-check of the convolution


def _spectral_A(u: np.ndarray) -> np.ndarray:
    out = np.ones_like(u)
    nz = np.abs(u) > 1e-8
    out[nz] = u[nz] / np.sinh(u[nz])
    return out


def _spectral_B(u: np.ndarray) -> np.ndarray:
    out = np.full_like(u, 0.25)
    nz = np.abs(u) > 1e-8
    out[nz] = u[nz] / (4.0 * np.tanh(u[nz]))
    return out


_COLLAPSED_UNIVERSAL: float | None = None


def _collapsed_universal() -> float:
    """K1 / (a + c), evaluated from the collapsed form of the convolution.

    Writing h_t as a Fourier-cosine transform in w with spectral density
    A(omega t) exp(-B(omega t) rho / t) / (8 pi^2 t), A(u) = u/sinh u,
    B(u) = u/(4 tanh u), the w-integral of h_s * (Y h_{1-s}) is a Parseval
    pairing (the sine-parity part of Y h drops), Euler's identity
    x gamma_x + y gamma_y = 2 gamma and the planar Gaussian moments collapse
    (x, y), and what is left is

        K1 = (a + c) * 4 pi^2 int_0^1 int_0^inf
             alpha beta (4 Q / C^2 - omega^2 / (2 C^3)) d omega ds

    with alpha = A(omega s)/(8 pi^2 s), beta = A(omega (1-s))/(8 pi^2 (1-s)),
    P = B(omega s)/s, Q = B(omega (1-s))/(1-s), C = P + Q.  The b-coefficient
    cancels in the moments, so only a + c survives.  Both nested integrals
    are smooth; the value equals 3/32 (the s-integral reduces by
    product-to-sum identities to int_0^inf [cosh w/sinh^2 w - w/sinh^3 w] dw
    = pi^2/8; docs/validation.md spells the steps out).
    """
    global _COLLAPSED_UNIVERSAL
    if _COLLAPSED_UNIVERSAL is not None:
        return _COLLAPSED_UNIVERSAL

    def inner(s: float) -> float:
        tau = 1.0 - s

        def f(omega):
            om = np.asarray(omega, dtype=float)
            alpha = _spectral_A(om * s) / (8.0 * math.pi ** 2 * s)
            beta = _spectral_A(om * tau) / (8.0 * math.pi ** 2 * tau)
            C = _spectral_B(om * s) / s + _spectral_B(om * tau) / tau
            Q = _spectral_B(om * tau) / tau
            return alpha * beta * (4.0 * Q / C ** 2 - om * om / (2.0 * C ** 3))

        res = integrate_adaptive(f, 0.0, 80.0, abs_tol=1e-14, rel_tol=1e-11,
                                 seed_edges=(1.0, 5.0, 20.0))
        return 4.0 * math.pi ** 2 * res.value

    def outer(s):
        return np.array([inner(float(v)) for v in np.atleast_1d(s)])

    res = integrate_adaptive(outer, 0.0, 1.0, abs_tol=1e-11, rel_tol=1e-10,
                             seed_edges=(0.1, 0.5, 0.9, 0.99))
    _COLLAPSED_UNIVERSAL = float(res.value)
    return _COLLAPSED_UNIVERSAL


def collapsed_k1(m) -> float:
    """Deterministic value of the same convolution duhamel_k1 estimates.

    No sampling and no time discretization: the (q, s)-integral is collapsed
    to two nested 1D quadratures (see `_collapsed_universal`).  Agrees with
    the closed form (3/32)(a + c) to quadrature precision and serves as the
    independent oracle for the Monte Carlo route.
    """
    m = _as_model(m)
    return _collapsed_universal() * (m.a + m.c)


# ---------------------------------------------------------------------------
# predicted expansion and the dilation bridge


def predicted_expansion(F: Frame, q) -> Tuple[float, float]:
    """Coefficients (1/16, kappa(q)/16) of t^-2 and t^-1 in p(t, q, q)."""
    return (1.0 / 16.0, geometry.kappa(F, q) / 16.0)


def scaling_bridge(p_eps_at_1: float, eps: float) -> float:
    """Convert the dilated-structure diagonal at time 1 into p(eps^2, q, q).

    The parabolic dilation has homogeneous dimension 4, so
    p_eps(1) = eps^4 p(eps^2) and the bridge divides by eps^4.
    """
    eps = float(eps)
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    return float(p_eps_at_1) / eps ** 4
