"""robinlab: numerical laboratory for divergence-form elliptic operators.

Solves Robin/Neumann weak problems on intervals and polygons with rough
(merely bounded, measurable) coefficients, executes the boundary-reflection
extension construction, evolves Robin and Wentzell-Robin parabolic
semigroups, and verifies ellipticity preservation, Hoelder/Lp regularity,
positivity, and (non)contraction properties at desk scale.
"""

__version__ = "0.1.0"

from .mesh import Mesh, build_interval_mesh, build_polygon_mesh, trace  # noqa: F401
from .coeff import CoefficientField, certify_ellipticity, checkerboard_coefficients  # noqa: F401
