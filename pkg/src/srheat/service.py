"""In-process service functions shared by the CLI and the optional web app.

Each function takes plain values, runs one pipeline, and returns plain dicts
and lists (JSON- and CSV-friendly), leaving presentation to the caller.
Numerical failures propagate as the library's own exception types; mapping
them to exit codes or HTTP statuses is the front ends' job.
"""

from __future__ import annotations

import math
from typing import Dict, List, Optional, Sequence, Tuple

from . import geometry, heisenberg
from .diffusion import PathConfig, density_at_start, fit_expansion, simulate_endpoints
from .geometry import Frame
from .heisenberg import QuadratureConfig
from .perturbation import QuadraticModel, duhamel_k1

__all__ = [
    "invariants_report",
    "kernel_report",
    "duhamel_report",
    "simulate_report",
    "fit_report",
    "su2_diagonal",
]

ORIGIN = (0.0, 0.0, 0.0)


def invariants_report(F: Frame, points: Sequence[Sequence[float]]) -> List[Dict]:
    """Per-point chi, kappa, and the six structure constants."""
    rows = []
    for q in points:
        x, y, w = (float(c) for c in q)
        sc = geometry.structure_constants(F, (x, y, w))
        inv = geometry.invariants(F, (x, y, w))
        rows.append({
            "x": x, "y": y, "w": w,
            "chi": inv.chi, "kappa": inv.kappa,
            "c01_1": sc.c01_1, "c01_2": sc.c01_2,
            "c02_1": sc.c02_1, "c02_2": sc.c02_2,
            "c12_1": sc.c12_1, "c12_2": sc.c12_2,
        })
    return rows


def kernel_report(
    t: float,
    q: Sequence[float],
    abs_tol: float = 1e-12,
    rel_tol: float = 1e-10,
    check_homogeneity: bool = False,
) -> Dict:
    """Heat-kernel value at (t, q), optionally with the dilation self-check.

    The homogeneity check recomputes the value through lam^4 h_{lam^2 t}
    (delta_lam q) on lam in {0.5, 2} and reports the worst mismatch.
    """
    t = float(t)
    if t <= 0:
        raise ValueError(f"time must be positive, got {t}")
    q = tuple(float(c) for c in q)
    cfg = QuadratureConfig(abs_tol=abs_tol, rel_tol=rel_tol)
    value = heisenberg.heat_kernel(t, q, cfg)
    out = {"t": t, "x": q[0], "y": q[1], "w": q[2], "value": value}
    if check_homogeneity:
        mismatch = 0.0
        for lam in (0.5, 2.0):
            scaled = lam ** 4 * heisenberg.heat_kernel(
                lam * lam * t, geometry.dilate_point(q, lam), cfg)
            mismatch = max(mismatch, abs(scaled - value))
        out["homogeneity_mismatch"] = mismatch
    return out


def duhamel_report(
    a: float,
    b: float,
    c: float,
    n_samples: int = 100_000,
    s_strata: int = 8,
    seed: int = 0,
    threads: int = 1,
) -> Dict:
    """K1 estimate for the quadratic model, with the predicted invariants.

    ``z_vs_kappa`` scores the estimate against the predicted kappa = 2(a+c);
    ``z_vs_zero`` against 0.  Both are reported — which one is the hypothesis
    depends on the caller's question.
    """
    m = QuadraticModel(float(a), float(b), float(c))
    est = duhamel_k1(m, n_samples=n_samples, s_strata=s_strata, seed=seed,
                     threads=threads)
    out = {
        "a": m.a, "b": m.b, "c": m.c,
        "k1": est.k1, "std_error": est.std_error,
        "n_samples": est.n_samples, "s_strata": est.s_strata,
        "predicted_chi": m.predicted_chi,
        "predicted_kappa": m.predicted_kappa,
    }
    if est.std_error > 0:
        out["z_vs_kappa"] = (est.k1 - m.predicted_kappa) / est.std_error
        out["z_vs_zero"] = est.k1 / est.std_error
    else:
        out["z_vs_kappa"] = 0.0 if est.k1 == m.predicted_kappa else math.inf
        out["z_vs_zero"] = 0.0 if est.k1 == 0.0 else math.inf
    return out


def simulate_report(
    F: Frame,
    t_grid: Sequence[float],
    n_paths: int = 100_000,
    n_steps: int = 128,
    seed: int = 0,
    start: Sequence[float] = ORIGIN,
    threads: int = 1,
) -> List[Dict]:
    """Diagonal density estimates over a t-grid via diffusion + KDE.

    One row per t: the estimate, its standard error, the rescaled value
    16 t^2 p_hat (whose small-time limit is 1), and bookkeeping counts.
    """
    if len(t_grid) == 0:
        raise ValueError("t_grid must not be empty")
    rows = []
    for i, t in enumerate(t_grid):
        cfg = PathConfig(t_final=float(t), n_steps=n_steps, n_paths=n_paths,
                         seed=seed + i)
        samples = simulate_endpoints(F, start, cfg, threads=threads)
        est = density_at_start(samples)
        rows.append({
            "t": float(t),
            "p_hat": est.value,
            "std_error": est.std_error,
            "scaled": 16.0 * float(t) ** 2 * est.value,
            "n_kept": samples.n_paths,
            "n_aborted": samples.n_aborted,
            "h_xy": est.bandwidth[0],
            "h_w": est.bandwidth[1],
            "empty_window": est.empty_window,
        })
    return rows


def su2_diagonal(t_grid: Sequence[float]) -> List[Tuple[float, float]]:
    """Exact diagonal samples e^t/(16 t^2) of the unit-kappa closed form."""
    return [(float(t), math.exp(float(t)) / (16.0 * float(t) ** 2)) for t in t_grid]


def fit_report(points: Sequence[Tuple[float, float]],
               simulate_rows: Optional[List[Dict]] = None) -> Dict:
    """Fit (a0, a1) of the small-time expansion from (t, p) samples."""
    points = list(points)
    a0, a1 = fit_expansion(points)
    out = {"a0": a0, "a1": a1, "n_points": len(points)}
    if simulate_rows is not None:
        out["t_grid"] = [row["t"] for row in simulate_rows]
    return out
