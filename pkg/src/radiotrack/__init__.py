"""Track a radio-tagged target from received signal strength detections.

The package models target movement as a damped (Ornstein-Uhlenbeck style)
process, maps the receiver's integer display reading to received power,
filters the detections with an unscented or extended Kalman filter, and
estimates the movement rates by maximum likelihood.
"""

from .errors import DataError, DegenerateGeometryError, NumericalError, OptimizationError
from .estimation import (DEFAULT_INITIAL_BETA, EstimationConfig, LikelihoodProblem, OptimizationTrace,
                         PsoConfig, estimate_parameters, lognormal_moments, multistart_newton,
                         negative_log_likelihood, newton_optimize, pso_optimize)
from .filtering import (FilterBelief, FilterRun, StepDiagnostics, default_initial_belief, ekf_step,
                        run_filter, run_filter_arrays, ukf_step)
from .measurement import (AntennaConfig, Calibration, CosineLobePattern, Detection, display_to_power,
                          field_amplitude, nearest_antenna, power_to_display, received_power)
from .movement import (MovementParams, TransitionModel, process_noise_cov, propagate,
                       sample_transition, state_vector, transition_matrix)
from .simulator import (GroundTruth, SimScenario, evaluate_track, monte_carlo_power_moments, simulate,
                        uniform_times)

__version__ = "0.1.0"

__all__ = [
    "AntennaConfig", "Calibration", "CosineLobePattern", "DataError", "DegenerateGeometryError",
    "Detection", "EstimationConfig", "FilterBelief", "FilterRun", "GroundTruth", "LikelihoodProblem",
    "MovementParams", "NumericalError", "OptimizationError", "OptimizationTrace", "DEFAULT_INITIAL_BETA",
    "PsoConfig", "SimScenario", "StepDiagnostics", "TransitionModel", "default_initial_belief",
    "display_to_power", "ekf_step", "estimate_parameters", "evaluate_track", "field_amplitude",
    "lognormal_moments", "monte_carlo_power_moments", "multistart_newton", "nearest_antenna",
    "negative_log_likelihood", "newton_optimize", "power_to_display", "process_noise_cov", "propagate",
    "pso_optimize", "received_power", "run_filter", "run_filter_arrays", "sample_transition",
    "simulate", "state_vector", "transition_matrix", "ukf_step", "uniform_times",
]
