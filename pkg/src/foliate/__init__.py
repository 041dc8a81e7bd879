"""Foliations of a neighborhood of a non-degenerate critical point of scalar curvature
by area-constrained Willmore spheres, computed numerically."""

from .errors import FoliateError, NumericalError, ValidationError
from .metric import CATALOG, CriticalPoint, CurvaturePoint, MetricSpec, curvature_at, find_scalar_critical
from .normal_chart import Frame, exp_map, log_map, parallel_frame
from .sphere import HarmonicField, build_grid, phi_zero
from .surface import embed_surface, willmore_residual
from .linearized import apply_linearized
from .solver import Family, Leaf, SolveOptions, continue_family, initial_guess, leaf_at_area, solve_leaf
from .foliation import FoliationReport, check_foliation, radial_profile

__version__ = "0.1.0"
