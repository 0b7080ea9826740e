"""Monte-Carlo solver for the bail-out optimal dividend problem.

Single-regime problems driven by finite-activity Lévy processes are solved
by simulating one batch of paths and bisecting the barrier-selection
function on it; regime-switching problems are solved by iterating the
per-regime solves on a piecewise-linear value grid.  A closed-form and ODE
oracle for Brownian motion with drift is included for validation.
"""

from .errors import (
    BailoutError,
    BatchTooLarge,
    ClassDViolation,
    ConfigError,
    HorizonTooShortWarning,
    MaxIterExceeded,
    NoRoot,
    NoUpperBracket,
    QuadratureFailure,
    SingularBVP,
    ValidationError,
    ZeroBarrierUnboundedVariation,
)
from .levy_model import (
    JumpComponent,
    LevyModel,
    PayoffSpec,
    PiecewiseLinear,
    ProblemSpec,
    SizeDistribution,
    validate_model,
    validate_problem,
)
from .map_engine import MapModel, SwitchJump, ValueGrid, contraction_constant, fixed_point_iterate
from .path_engine import PathBatch, simulate_batch
from .single_solver import estimate_g, estimate_value, g_curve, solve_bstar, value_samples

__version__ = "0.1.0"
