"""qflat: Q-curvature, Gauss-map degree and quantization checks for conformally flat metrics."""

from .fields import ScalarField, field_from_id
from .hypersurface import surface_from_id
from .normal_metric import density_from_id
from .quadrature import QuadratureSpec

__version__ = "0.1.0"

__all__ = ["ScalarField", "field_from_id", "surface_from_id", "density_from_id", "QuadratureSpec",
           "__version__"]
