"""Conformal calibration of PDE surrogates with physics-residual scores."""
__version__ = "0.1.0"

from ._accel import backend
from .conformal import (CalibrationResult, CoverageReport, PredictionBand, ScoreBatch, aer_scores,
                        calibrate_joint, calibrate_marginal, conformal_quantile, coverage_curve,
                        empirical_coverage, pre_scores, prediction_band, std_scores,
                        validate_prediction)
from .grid import (Axis, FieldTensor, Grid, ParamBox, burgers_ic, gaussian_bump_ic,
                   latin_hypercube_sample, load_field, periodic_axis, save_field)
from .residual import (ResidualProgram, advection_program, boundary_residual_program,
                       burgers_program, linear_program, navier_stokes_programs, wave_program)
from .solvers import SolverConfig, solve
from .stencil import (Kernel, add_kernels, apply, build_kernel, central_difference_weights,
                      derivative_kernel, identity_kernel)
from .surrogate import ensemble_spread, perturbed_oracle, train_spectral_ar
