"""Online conformal prediction with retrospective adjustment.

Sliding-window kernel ridge regression keeps its regularized inverse Gram
matrix current with rank-one updates, so every leave-one-out residual and
prediction in the window is revised at each step and fed to a Jackknife+
interval whose miscoverage level is steered by an adaptive controller.
"""

from retroconf._backend import kernels as _kernels
from retroconf.alpha_control import ACI, SAOCP, SFOGD, AgACI, DtACI, Feedback, make_controller, pinball, pinball_subgrad
from retroconf.conformal import (
    ForwardCalibration,
    JackknifePlus,
    PredictionInterval,
    beta_t,
    empirical_quantile,
    fw_interval,
    ra_interval,
)
from retroconf.datagen import Stream, StreamRecord, SyntheticConfig, generate, lag_embed, wendland_bump
from retroconf.errors import KernelDomainError, NumericalError, RetroconfError, SelectionError, UsageError
from retroconf.evaluation import MetricsRow, RunSummary, aggregate_replications, local_coverage, local_width
from retroconf.experiment import ExperimentConfig, RunResult, run_experiment
from retroconf.kernel import KernelSpec, gram_matrix, gram_vector, kernel_eval
from retroconf.online_krr import WindowState, factorization_count, fit_initial, loo_cv_select

BACKEND = _kernels.NAME

__version__ = "0.1.0"
