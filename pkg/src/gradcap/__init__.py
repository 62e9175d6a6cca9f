"""Solver and diagnostics for evolution problems with a pointwise bound on
the gradient, |grad u| <= G(x, u), approximated by exponential penalization
of the constraint and vanishing artificial viscosity."""

from .asymptotic import (ContractionResult, DecayFit, StationaryResult,
                         contraction_test, data_hypotheses, decay_rate,
                         holder_convergence, holder_floor, solve_stationary,
                         stationary_residual)
from .config import (ConfigError, RunConfig, build_config, load_config,
                     load_config_text, parse_config_text, serialize_config)
from .continuation import (ContinuationSchedule, StageRecord, Trajectory,
                           ladder, solve_parabolic_qvi, solve_qvi, solve_vi)
from .diagnostics import (COINCIDENCE, FREE, DiagnosticsReport, LedgerEntry,
                          classify_regions, complementarity_residual,
                          constraint_violation, estimate_ledger,
                          face_threshold, parse_report, qvi_residual,
                          rescale_into, residual_single, serialize_report)
from .expr import (EvaluationError, Expression, ExpressionError, evaluate,
                   parse_expression, partial_u, to_source)
from .grid import (FaceVectorField, Grid, ScalarField, divergence,
                   face_gradient_magnitude, field_from_callable, gradient,
                   inner_product, node_gradient_magnitude, read_snapshot,
                   write_snapshot)
from .model import (AssumptionCheck, ProblemSpec, ValidationReport, make_spec,
                    sup_bound_M, sup_bound_value, validate)
from .parabolic import (StepControls, Stepper, StepperState,
                        StiffnessCollapse, cfl_dt, discrete_multiplier,
                        initial_state, step)
from .penalty import (RegularizationParams, penalty_K, penalty_clamped,
                      penalty_k, penalty_k_prime, smooth_constraint)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
