"""Information-prior regression in reproducing kernel Hilbert spaces.

Kernels over metric covariate spaces, Fisher-information covariance,
exact Gaussian posteriors, marginal-likelihood hyperparameter
estimation, Tikhonov and squared-exponential GPR baselines, a
simulation-study runner, and dataset protocols for functional
regression and naive classification.
"""

from .error_models import AR1, IID, MA1, ar1_fn_norm, covariance_matrix, precision_matrix
from .kernels import (
    CanonicalKernel,
    CenteredKernel,
    EuclideanMetric,
    FbmKernel,
    GramMatrix,
    MahalanobisMetric,
    SobolevMetric,
    SqExpKernel,
    center_kernel,
    cross_gram,
    eval_kernel,
    gram,
    inner_product,
)
from .core import (
    IPriorModel,
    MarginalProfile,
    NumericalBreakdown,
    PosteriorSummary,
    fisher_info_functional,
    fisher_kernel,
    fn_norm,
    log_marginal_likelihood,
    param_fisher_info_fd,
)
from .estimation import FitConfig, LocalMaximum, fit_ml, select_by_cv, select_kernel_hyper
from .baselines import (
    SeGprFit,
    TikhonovFit,
    gcv_select,
    gprior_covariance,
    iprior_linear_covariance,
    se_gpr_fit,
    tikhonov_fit,
    tikhonov_ml,
)
from .simulation import StudyConfig, StudyResult, gen_truth, mae, matrix_power, run_study
from .data_io import Dataset, classify_eval, load_functional, load_tabular, tecator_benchmark

__version__ = "0.1.0"
