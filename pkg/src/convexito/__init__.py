"""Convex functions of continuous semimartingales, probed numerically."""

__version__ = "0.1.0"

from .convex_core import (AffinePiece, ConvexOracle, PLConvex, SmoothedConvex, abs_oracle,
                          active_index, affine_oracle, directional_derivative,
                          directional_limit, estimate_rho, euclidean_norm_oracle, eval_pl,
                          mollified_subgradient, quadratic_oracle, smooth, subdifferential_pl,
                          subgradient_check)
from .decomposition_lab import (ConvergenceCurve, DecompositionResult, condition_estimates,
                                decompose_pl, epsilon_convergence_experiment,
                                residual_flatness_check, smoothing_convergence_experiment,
                                verify_decomposition)
from .exceptions import (ConfigError, ConvexityViolationError, ConvexitoError,
                         InsufficientDataError, InvalidInputError, LimitFailureError,
                         SmoothingError, UnsupportedDimensionError)
from .ito_engine import (hp_norm_estimate, ito_integral, local_time_occupation,
                         local_time_tanaka, martingale_test, quadratic_covariation,
                         quadratic_variation, total_variation)
from .path_sim import (ProcessRecipe, SemimartingalePath, TimeGrid, build_semimartingale,
                       perturb, simulate_bm, stop_at_exit)
from .rng import RandomStreams
