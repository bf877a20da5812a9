"""Co-clustering of binary matrices with informative (non-ignorable)
missingness.

A latent block model where row/column classes drive the data values and
per-row/per-column Gaussian propensity deviations drive the mask, fitted
by variational EM with a second-order delta approximation of the bound.
"""

__version__ = "1.0.0"

from .criterion import VariationalState, delta_expectation, elbo, entropy
from .inference import (FitConfig, FitResult, OptimizerConfig, estep, fit,
                        init_spectral, m_step, multi_start_fit, ve_step)
from .io import ParseError, file_digest, load_matrix, save_matrix, write_json
from .metrics import (LabelAssignment, align_labels, l_item, latent_mse,
                      map_assignments, param_max_error)
from .model import (CELL_MISSING, CELL_ONE, CELL_ZERO, CompleteSample,
                    ContractError, DomainError, MissingnessKind, ModelParams,
                    ObservedMatrix, cell_probs, complete_loglik, logistic)
from .selection import (SelectionEntry, icl, icl_mar, icl_mcar, icl_nmar,
                        select_model)
from .simulate import (BenchmarkConfig, CalibrationError, RiskConfig,
                       calibrate_epsilon, conditional_bayes_risk,
                       exact_label_marginals, make_benchmark_params,
                       realized_risk, risk_from_marginals, sample_lbm)

__all__ = [
    "__version__",
    "CELL_MISSING", "CELL_ONE", "CELL_ZERO",
    "MissingnessKind", "ObservedMatrix", "ModelParams", "CompleteSample",
    "DomainError", "ContractError", "ParseError", "CalibrationError",
    "logistic", "cell_probs", "complete_loglik",
    "VariationalState", "entropy", "delta_expectation", "elbo",
    "OptimizerConfig", "FitConfig", "FitResult",
    "ve_step", "m_step", "fit", "init_spectral", "multi_start_fit", "estep",
    "SelectionEntry", "icl", "icl_nmar", "icl_mar", "icl_mcar", "select_model",
    "LabelAssignment", "map_assignments", "align_labels", "l_item",
    "param_max_error", "latent_mse",
    "BenchmarkConfig", "RiskConfig", "make_benchmark_params", "sample_lbm",
    "risk_from_marginals", "exact_label_marginals", "conditional_bayes_risk",
    "realized_risk", "calibrate_epsilon",
    "load_matrix", "save_matrix", "file_digest", "write_json",
]
