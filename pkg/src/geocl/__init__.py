"""geocl: continual learning in dynamically expanding mixed-curvature spaces."""

from .errors import (ConfigurationError, ContractViolation, DegenerateAngleError,
                     GeoclError, NumericalDomainError)
from .geometry import CcsPoint, TangentVec
from .product import FactorSpec, MixedSpace, ProductPoint, ProductTangent

__version__ = "0.1.0"

__all__ = [
    "CcsPoint", "TangentVec", "FactorSpec", "MixedSpace", "ProductPoint",
    "ProductTangent", "GeoclError", "ConfigurationError", "NumericalDomainError",
    "DegenerateAngleError", "ContractViolation", "__version__",
]
