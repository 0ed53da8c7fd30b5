"""Shape-parameter tuning for radial kernel interpolation by leave-p-out
cross-validation, exact and with a randomized low-rank inverse."""

from .cv import (
    CvErrorVector,
    FoldPlan,
    GramSystem,
    InvalidFoldSize,
    SingularSubblock,
    SketchConfig,
    SweepResult,
    era_error_vector,
    gram_builder,
    make_folds,
    sera_error_vector,
    sketch_inverse,
    sweep,
)
from .interpolant import FittedInterpolant, error_norm, fit
from .kernels import DimensionMismatch, DomainError, EpsilonGrid, RadialKernel, gram_matrix
from .linalg import Regularization, SingularMatrix
from .pointsets import equispaced_grid, halton_points

__version__ = "0.1.0"
