"""stokeslab: a 2D numerical laboratory for the Stokes obstacle problem.

Forward mixed-FEM solves, boundary stress measurement, scaled Sobolev
norms, quantitative unique-continuation probes, Cauchy-data extension,
and obstacle-stability sweep experiments.
"""

from .geometry import (
    BallChain,
    BoundaryCurve,
    Cone,
    DomainSpec,
    GeometryError,
    HausdorffResult,
    RegularizedBoundary,
    ValidationReport,
    build_ball_chain,
    hausdorff_distance,
    load_curve,
    offset_boundary,
    save_curve,
    validate_domain,
)

__version__ = "0.1.0"
