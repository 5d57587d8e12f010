"""Optional HTTP front end over the service layer.

Requires the ``service`` extra (fastapi + pydantic + uvicorn); the core
library never imports this module.  Endpoints mirror the CLI subcommands and
return the service-layer dicts as JSON.  Malformed structures and bad
parameters map to 400, schema violations to FastAPI's native 422, and
numerical-tolerance failures to 500 with the failure message in ``detail``.

Run locally with::

    uvicorn srheat.webapp:app
"""

from __future__ import annotations

from typing import List, Optional, Tuple

try:
    from fastapi import FastAPI, HTTPException
    from pydantic import BaseModel, Field
except ImportError as exc:  # pragma: no cover - exercised only without the extra
    raise ImportError(
        "the web app needs the optional service dependencies; "
        "install with: pip install 'srheat[service]'"
    ) from exc

from . import service
from .heisenberg import ToleranceNotMetError
from .perturbation import NonFiniteIntegrandError, StratumStarvationError
from .structures import StructureError, resolve_structure

__all__ = ["app", "create_app"]

Point = Tuple[float, float, float]


class InvariantsRequest(BaseModel):
    structure: str = Field(description="built-in spelling or server-side JSON path")
    points: List[Point] = Field(default=[(0.0, 0.0, 0.0)], min_length=1)


class KernelRequest(BaseModel):
    t: float
    q: Point = (0.0, 0.0, 0.0)
    abs_tol: float = 1e-12
    rel_tol: float = 1e-10
    check_homogeneity: bool = False


class DuhamelRequest(BaseModel):
    a: float
    b: float
    c: float
    n_samples: int = 100_000
    s_strata: int = 8
    seed: int = 0
    threads: int = 1


class SimulateRequest(BaseModel):
    structure: str
    t_grid: List[float] = Field(min_length=1)
    n_paths: int = 100_000
    n_steps: int = 128
    seed: int = 0
    start: Point = (0.0, 0.0, 0.0)
    threads: int = 1


class FitRequest(SimulateRequest):
    structure: Optional[str] = None
    analytic: Optional[str] = None


def _resolve(spec: str):
    try:
        return resolve_structure(spec)
    except StructureError as exc:
        raise HTTPException(status_code=400, detail=str(exc))


def create_app() -> FastAPI:
    app = FastAPI(title="srheat", description=__doc__)

    @app.exception_handler(ValueError)
    async def _value_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(ToleranceNotMetError)
    @app.exception_handler(NonFiniteIntegrandError)
    @app.exception_handler(StratumStarvationError)
    async def _numerical_error(request, exc):
        from fastapi.responses import JSONResponse
        return JSONResponse(status_code=500, content={"detail": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/invariants")
    def invariants(req: InvariantsRequest):
        _, F = _resolve(req.structure)
        return {"rows": service.invariants_report(F, req.points)}

    @app.post("/kernel")
    def kernel(req: KernelRequest):
        return service.kernel_report(req.t, req.q, abs_tol=req.abs_tol,
                                     rel_tol=req.rel_tol,
                                     check_homogeneity=req.check_homogeneity)

    @app.post("/duhamel")
    def duhamel(req: DuhamelRequest):
        return service.duhamel_report(req.a, req.b, req.c,
                                      n_samples=req.n_samples,
                                      s_strata=req.s_strata, seed=req.seed,
                                      threads=req.threads)

    @app.post("/simulate")
    def simulate(req: SimulateRequest):
        _, F = _resolve(req.structure)
        rows = service.simulate_report(F, req.t_grid, n_paths=req.n_paths,
                                       n_steps=req.n_steps, seed=req.seed,
                                       start=req.start, threads=req.threads)
        return {"rows": rows}

    @app.post("/fit")
    def fit(req: FitRequest):
        if req.analytic is not None:
            if req.structure is not None:
                raise HTTPException(status_code=400,
                                    detail="analytic replaces structure; give one "
                                           "or the other")
            if req.analytic != "su2":
                raise HTTPException(status_code=400,
                                    detail=f"unknown analytic form {req.analytic!r}")
            return service.fit_report(service.su2_diagonal(req.t_grid))
        if req.structure is None:
            raise HTTPException(status_code=400,
                                detail="structure or analytic is required")
        _, F = _resolve(req.structure)
        rows = service.simulate_report(F, req.t_grid, n_paths=req.n_paths,
                                       n_steps=req.n_steps, seed=req.seed,
                                       start=req.start, threads=req.threads)
        return service.fit_report([(r["t"], r["p_hat"]) for r in rows], rows)

    return app


app = create_app()
