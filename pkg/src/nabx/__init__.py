"""Bayesian inversion of the non-Abelian X-ray transform on the unit disk."""

__version__ = "0.1.0"

from .geometry import BoundaryPoint, boundary_quadrature, disk_quadrature  # noqa: E402
from .fields import BumpField, CallableField, CoefficientField, ZeroField, so_basis  # noqa: E402
from .transport import OdeOptions, scattering_data  # noqa: E402
from .model import Dataset, PosteriorContext, PriorSpec, simulate_dataset  # noqa: E402
from .surrogate import SurrogateSpec, surrogate_logpost  # noqa: E402
from .langevin import SamplerConfig, run  # noqa: E402

__all__ = [
    "__version__",
    "BoundaryPoint",
    "boundary_quadrature",
    "disk_quadrature",
    "BumpField",
    "CallableField",
    "CoefficientField",
    "ZeroField",
    "so_basis",
    "OdeOptions",
    "scattering_data",
    "Dataset",
    "PosteriorContext",
    "PriorSpec",
    "simulate_dataset",
    "SurrogateSpec",
    "surrogate_logpost",
    "SamplerConfig",
    "run",
]
