"""srheat: invariants, heat kernels and hypoelliptic diffusion for 3D
contact sub-Riemannian structures.

The package splits into layers:

* `srheat.expr` — the expression calculator behind every symbolic coefficient
* `srheat.geometry` — frames, brackets, structure constants, chi and kappa
* `srheat.quadrature` / `srheat.heisenberg` — the flat-kernel oscillatory
  integrals and their derivatives
* `srheat.diffusion` — Stratonovich-Heun Monte Carlo and density estimation
* `srheat.perturbation` — the first-order Duhamel convolution K1
* `srheat.structures` / `srheat.service` / `srheat.cli` — loading structure
  definitions and the command-line front end (plus `srheat.webapp` when the
  ``service`` extra is installed)
"""

from .diffusion import (
    DensityEstimate,
    EndpointSamples,
    PathConfig,
    density_at_start,
    export_csv,
    fit_expansion,
    simulate_endpoints,
)
from .expr import ExprError, differentiate, evaluate, parse, to_callable
from .geometry import (
    DegenerateFrameError,
    Frame,
    GeometryError,
    InconsistentInvariantError,
    Invariants,
    StructureConstants,
    VectorField,
    chi,
    heisenberg_frame,
    invariants,
    kappa,
    lie_bracket,
    reeb_field,
    rotate_frame,
    structure_constants,
)
from .heisenberg import (
    GroupElement,
    QuadratureConfig,
    ToleranceNotMetError,
    heat_kernel,
    heat_kernel_derivatives,
    heat_kernel_two_point,
    y_applied_kernel,
)
from .perturbation import (
    DuhamelEstimate,
    QuadraticModel,
    collapsed_k1,
    duhamel_k1,
    epsilon_expansion_check,
    model_frame,
    predicted_expansion,
    scaling_bridge,
)
from .quadrature import QuadratureResult, integrate_adaptive
from .structures import StructureError, load_structure, resolve_structure

__version__ = "0.1.0"

__all__ = [
    "__version__",
    # expr
    "ExprError", "parse", "evaluate", "differentiate", "to_callable",
    # geometry
    "GeometryError", "DegenerateFrameError", "InconsistentInvariantError",
    "VectorField", "Frame", "StructureConstants", "Invariants",
    "lie_bracket", "reeb_field", "heisenberg_frame", "rotate_frame",
    "structure_constants", "invariants", "chi", "kappa",
    # quadrature / kernel
    "QuadratureResult", "integrate_adaptive",
    "GroupElement", "QuadratureConfig", "ToleranceNotMetError",
    "heat_kernel", "heat_kernel_two_point", "heat_kernel_derivatives",
    "y_applied_kernel",
    # diffusion
    "PathConfig", "DensityEstimate", "EndpointSamples",
    "simulate_endpoints", "density_at_start", "fit_expansion", "export_csv",
    # perturbation
    "QuadraticModel", "DuhamelEstimate", "model_frame",
    "epsilon_expansion_check", "duhamel_k1", "collapsed_k1",
    "predicted_expansion", "scaling_bridge",
    # structures
    "StructureError", "load_structure", "resolve_structure",
]
