"""Monte Carlo simulation of the hypoelliptic diffusion of a contact frame.

The process simulated here has generator equal to the sub-Laplacian

    Delta = f1^2 + f2^2 + c12_2 f1 - c12_1 f2,

which is why the driving fields carry a factor sqrt(2):

    dq = sqrt(2) f1(q) o dW1 + sqrt(2) f2(q) o dW2 + (c12_2 f1 - c12_1 f2)(q) dt

in Stratonovich form.  Mind the convention: much of the literature normalises
the heat equation as d/dt = (1/2) Delta, but the kernel module works with
d/dt = Delta, and the sqrt(2) keeps endpoint laws consistent with it (for the
Heisenberg frame the x-marginal has variance 2t, not t).

Time stepping is the Stratonovich-Heun midpoint scheme: an Euler predictor
followed by a trapezoidal corrector using the same Brownian increment.  It
needs no Ito-correction bookkeeping for non-commuting fields and is
second-order weak on the drift-free part.  Paths advance in 16 independently
seeded batches (``numpy.random.SeedSequence.spawn``), so standard errors come
from batch means and a fixed seed reproduces results bit-for-bit regardless of
thread count.

The frame degenerating along a path shows up as non-finite coefficient values
or runaway coordinates; either aborts that path, and aborted paths are counted
rather than silently dropped.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Optional, Sequence, Tuple, Union

import numpy as np

from .expr import to_callable
from .geometry import Frame

logger = logging.getLogger(__name__)

__all__ = [
    "PathConfig",
    "DensityEstimate",
    "EndpointSamples",
    "CompiledSDE",
    "compile_sde",
    "integrate_heun",
    "simulate_endpoints",
    "default_bandwidth",
    "density_at_start",
    "fit_expansion",
    "export_csv",
]

#: Number of independently seeded path batches; batch means feed standard errors.
N_BATCHES = 16

#: Paths leaving this ball are treated as exploded and aborted.
EXPLOSION_RADIUS = 1.0e6


@dataclass(frozen=True)
class PathConfig:
    """Simulation request: horizon, resolution, ensemble size, and seed."""

    t_final: float
    n_steps: int
    n_paths: int
    seed: int

    def __post_init__(self):
        if not (self.t_final > 0):
            raise ValueError(f"t_final must be positive, got {self.t_final}")
        if self.n_steps < 64:
            raise ValueError(f"n_steps must be at least 64, got {self.n_steps}")
        if self.n_paths < 1000:
            raise ValueError(f"n_paths must be at least 1000, got {self.n_paths}")


@dataclass(frozen=True)
class DensityEstimate:
    """On-diagonal KDE value with its bandwidth and batch-means standard error.

    ``empty_window`` flags the degenerate case where no sample fell inside the
    kernel support, so the (zero) value carries no statistical information.
    """

    value: float
    bandwidth: Tuple[float, float]
    std_error: float
    empty_window: bool = False

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("density estimate cannot be negative")
        h_xy, h_w = self.bandwidth
        if not (h_xy > 0 and h_w > 0):
            raise ValueError(f"bandwidths must be positive, got {self.bandwidth}")
        if abs(h_w - h_xy * h_xy) > 1e-9 * max(h_w, h_xy * h_xy):
            raise ValueError(
                f"anisotropic bandwidth must satisfy h_w = h_xy^2, got {self.bandwidth}"
            )
        if self.std_error < 0:
            raise ValueError("standard error cannot be negative")


@dataclass(frozen=True)
class EndpointSamples:
    """Surviving endpoint coordinates, grouped into seeded batches.

    ``points`` has one row (x, y, w) per surviving path; rows are ordered by
    batch and ``batch_edges[i]:batch_edges[i+1]`` slices out batch ``i``.
    ``n_aborted`` counts paths dropped by the explosion / finiteness guards.
    """

    points: np.ndarray
    t_final: float
    start: Tuple[float, float, float]
    batch_edges: np.ndarray
    n_aborted: int = 0

    @property
    def n_paths(self) -> int:
        return int(self.points.shape[0])


class CompiledSDE:
    """Coefficient callables for one frame's diffusion, compiled once.

    Evaluating returns the nine coefficient arrays (f1, f2, drift) at a batch
    of states; constant coefficients come back as scalars and broadcast.
    """

    def __init__(self, frame: Frame):
        c12_1, c12_2 = frame.c12_symbolic
        drift = frame.f1.scale(c12_2) - frame.f2.scale(c12_1)
        coeffs = (*frame.f1.coeffs, *frame.f2.coeffs, *drift.coeffs)
        self._fns = tuple(to_callable(c) for c in coeffs)

    def __call__(self, x, y, w):
        return [f(x, y, w) for f in self._fns]


def compile_sde(frame: Frame) -> CompiledSDE:
    return CompiledSDE(frame)


def integrate_heun(
    sde: CompiledSDE,
    start: Sequence[float],
    t_ends: np.ndarray,
    n_steps: int,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, np.ndarray]:
    """Advance one batch of paths to per-path end times.

    Every path takes ``n_steps`` Heun steps of size ``t_ends[i] / n_steps``,
    so end times may differ across the batch (the perturbation pipeline relies
    on this).  Returns ``(endpoints, alive)`` where ``endpoints`` is (n, 3)
    and ``alive`` flags paths that stayed finite and inside the explosion
    radius; dead paths keep their last good state but must be discarded by the
    caller.  The Brownian increments are always drawn for the whole batch, so
    the stream consumption — hence the result — does not depend on which paths
    die.
    """
    t_ends = np.asarray(t_ends, dtype=float)
    if t_ends.ndim != 1:
        raise ValueError("t_ends must be a 1-D array of per-path end times")
    if np.any(t_ends <= 0):
        raise ValueError("all end times must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")

    n = t_ends.shape[0]
    x0, y0, w0 = (float(c) for c in start)
    X = np.full(n, x0)
    Y = np.full(n, y0)
    W = np.full(n, w0)
    alive = np.ones(n, dtype=bool)

    dt = t_ends / n_steps
    root2dt = np.sqrt(2.0 * dt)
    r2 = EXPLOSION_RADIUS * EXPLOSION_RADIUS

    for _ in range(n_steps):
        noise = rng.standard_normal((2, n))
        e1 = root2dt * noise[0]
        e2 = root2dt * noise[1]
        with np.errstate(all="ignore"):
            f1x, f1y, f1w, f2x, f2y, f2w, bx, by, bw = sde(X, Y, W)
            Px = X + f1x * e1 + f2x * e2 + bx * dt
            Py = Y + f1y * e1 + f2y * e2 + by * dt
            Pw = W + f1w * e1 + f2w * e2 + bw * dt
            g1x, g1y, g1w, g2x, g2y, g2w, cx, cy, cw = sde(Px, Py, Pw)
            Xn = X + 0.5 * ((f1x + g1x) * e1 + (f2x + g2x) * e2 + (bx + cx) * dt)
            Yn = Y + 0.5 * ((f1y + g1y) * e1 + (f2y + g2y) * e2 + (by + cy) * dt)
            Wn = W + 0.5 * ((f1w + g1w) * e1 + (f2w + g2w) * e2 + (bw + cw) * dt)
            ok = np.isfinite(Xn) & np.isfinite(Yn) & np.isfinite(Wn)
            ok &= (Xn * Xn + Yn * Yn + Wn * Wn) <= r2
        keep = alive & ok
        X = np.where(keep, Xn, X)
        Y = np.where(keep, Yn, Y)
        W = np.where(keep, Wn, W)
        alive = keep

    return np.column_stack([X, Y, W]), alive


def _batch_sizes(n_paths: int) -> list:
    base, extra = divmod(n_paths, N_BATCHES)
    return [base + (1 if i < extra else 0) for i in range(N_BATCHES)]


def simulate_endpoints(
    F: Frame,
    start: Sequence[float],
    cfg: PathConfig,
    *,
    threads: int = 1,
) -> EndpointSamples:
    """Simulate ``cfg.n_paths`` diffusion paths from ``start`` and keep endpoints.

    The frame is contact-checked at the start point up front (a degenerate
    frame raises); degeneracy met further along a path surfaces as non-finite
    coefficients or an exploding state, and such paths are aborted into
    ``n_aborted``.  ``threads`` > 1 runs the 16 batches on a thread pool; the
    result is identical either way because every batch owns a spawned RNG
    stream and batches are concatenated in order.
    """
    if threads < 1:
        raise ValueError("threads must be at least 1")
    start3 = tuple(float(c) for c in start)
    F.basis_matrix(start3)  # raises DegenerateFrameError off the contact locus
    sde = compile_sde(F)
    sizes = _batch_sizes(cfg.n_paths)
    streams = np.random.SeedSequence(cfg.seed).spawn(N_BATCHES)

    def run_batch(i: int):
        rng = np.random.default_rng(streams[i])
        t_ends = np.full(sizes[i], cfg.t_final)
        pts, alive = integrate_heun(sde, start3, t_ends, cfg.n_steps, rng)
        return pts[alive], int(np.count_nonzero(~alive))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, N_BATCHES)) as pool:
            results = list(pool.map(run_batch, range(N_BATCHES)))
    else:
        results = [run_batch(i) for i in range(N_BATCHES)]

    kept = [pts for pts, _ in results]
    n_aborted = sum(n_bad for _, n_bad in results)
    if n_aborted:
        logger.warning("aborted %d of %d paths (explosion/degeneracy guard)",
                       n_aborted, cfg.n_paths)
    edges = np.concatenate([[0], np.cumsum([len(p) for p in kept])])
    points = np.concatenate(kept, axis=0) if kept else np.empty((0, 3))
    return EndpointSamples(
        points=points,
        t_final=cfg.t_final,
        start=start3,
        batch_edges=edges,
        n_aborted=n_aborted,
    )


def default_bandwidth(t: float, n_paths: int) -> Tuple[float, float]:
    """Anisotropic KDE bandwidth (h_xy, h_w) adapted to the parabolic scaling.

    The planar bandwidth tracks the diffusive scale sqrt(t) and shrinks like
    (n / 10^6)^(-1/8); the vertical bandwidth is its square, mirroring the
    dilation weights (1, 1, 2) of the coordinates.  The slow shrink rate keeps
    the expected number of in-window samples large at small t — an on-diagonal
    window has volume h_xy^2 h_w ~ t^2, exactly the scale of 1/p(t,0,0), so a
    faster rate starves the estimator long before n reaches practical sizes.
    """
    if not (t > 0):
        raise ValueError("t must be positive")
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    h_xy = 0.35 * np.sqrt(t) * (n_paths / 1.0e6) ** (-0.125)
    return (float(h_xy), float(h_xy * h_xy))


def _resolve_bandwidth(samples, bandwidth) -> Tuple[float, float]:
    if bandwidth is None:
        return default_bandwidth(samples.t_final, max(samples.n_paths, 1))
    if np.isscalar(bandwidth):
        h = float(bandwidth)
        return (h, h * h)
    h_xy, h_w = (float(b) for b in bandwidth)
    return (h_xy, h_w)


def density_at_start(
    samples: EndpointSamples,
    start: Optional[Sequence[float]] = None,
    bandwidth: Union[None, float, Tuple[float, float]] = None,
) -> DensityEstimate:
    """Product-Epanechnikov KDE of the endpoint density at the start point.

    Coordinates are centred at ``start`` (default: the samples' own start) and
    scaled by the anisotropic bandwidth (h_xy, h_xy, h_w); each axis uses the
    Epanechnikov kernel 0.75 (1 - u^2) on [-1, 1].  The standard error comes
    from means over the 16 seeded batches.  With no sample in the kernel
    support the value is 0 and ``empty_window`` is set.
    """
    h_xy, h_w = _resolve_bandwidth(samples, bandwidth)
    center = samples.start if start is None else tuple(float(c) for c in start)
    pts = samples.points
    n = pts.shape[0]
    if n == 0:
        return DensityEstimate(0.0, (h_xy, h_w), 0.0, empty_window=True)

    scale = np.array([h_xy, h_xy, h_w])
    u = (pts - np.asarray(center)) / scale
    kern = np.prod(np.clip(0.75 * (1.0 - u * u), 0.0, None), axis=1)
    volume = h_xy * h_xy * h_w
    value = float(np.sum(kern) / (n * volume))  # np.sum is pairwise: reproducible

    edges = samples.batch_edges
    means = []
    for i in range(len(edges) - 1):
        lo, hi = int(edges[i]), int(edges[i + 1])
        if hi > lo:
            means.append(np.sum(kern[lo:hi]) / ((hi - lo) * volume))
    if len(means) > 1:
        m = np.asarray(means)
        std_error = float(np.sqrt(np.sum((m - m.mean()) ** 2)
                                  / (len(m) * (len(m) - 1))))
    else:
        std_error = 0.0
    return DensityEstimate(
        value=value,
        bandwidth=(h_xy, h_w),
        std_error=std_error,
        empty_window=bool(np.max(kern) == 0.0),
    )


def fit_expansion(points: Sequence[Tuple[float, float]]) -> Tuple[float, float]:
    """Fit the small-time law 16 t^2 p(t) ~ a0 + a1 t and return (a0, a1).

    The rescaled diagonal density genuinely carries a t^2 term as well, so the
    least squares runs against {1, t, t^2} and reports only intercept and
    slope: on grids where t is not asymptotically small, dropping the
    quadratic nuisance aliases curvature into the slope (feeding exact samples
    of e^t/(16 t^2) over t in [0.05, 0.3] to a straight-line fit returns a
    slope near 1.18 rather than 1).
    """
    pts = [(float(t), float(p)) for t, p in points]
    t = np.array([a for a, _ in pts])
    p = np.array([b for _, b in pts])
    if np.unique(t).size < 3:
        raise ValueError("need at least 3 distinct t values to fit the expansion")
    z = 16.0 * t * t * p
    design = np.column_stack([np.ones_like(t), t, t * t])
    coef, _, _, _ = np.linalg.lstsq(design, z, rcond=None)
    return (float(coef[0]), float(coef[1]))


def export_csv(samples: EndpointSamples, destination: Union[str, Path, IO[str]]) -> None:
    """Write endpoints as CSV with header ``x,y,w``.

    Values are formatted with ``repr`` of Python floats (shortest decimal that
    round-trips), so re-reading reproduces the samples bit for bit.
    """
    own = isinstance(destination, (str, Path))
    fh = open(destination, "w", encoding="utf-8", newline="") if own else destination
    try:
        fh.write("x,y,w\n")
        for x, y, w in samples.points.tolist():
            fh.write(f"{x!r},{y!r},{w!r}\n")
    finally:
        if own:
            fh.close()
