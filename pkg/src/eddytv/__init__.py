"""Eddy-current conductivity imaging with total-variation regularization.

Reconstructs the conductivity of buried inclusions from tangential
electric-field data measured on the top boundary of a box domain. The
forward model is the eddy-current approximation of Maxwell's equations,
discretized with lowest-order edge elements plus a scalar multiplier
enforcing the divergence constraint in the insulating region; the
inverse problem minimizes a boundary misfit with TV regularization via
an ADMM whose multiplier update is the adjoint-state gradient.
"""

__version__ = "0.1.0"

from .errors import ConfigError, MeshFormatError, NumericalError, SingularMatrixError
from .mesh import DomainSpec, Mesh, build_box_mesh, read_mesh, uniform_refine, write_mesh

__all__ = [
    "ConfigError",
    "MeshFormatError",
    "NumericalError",
    "SingularMatrixError",
    "DomainSpec",
    "Mesh",
    "build_box_mesh",
    "read_mesh",
    "uniform_refine",
    "write_mesh",
    "__version__",
]
