"""Fair empirical risk minimization with f-divergence regularizers.

The package trains softmax classifiers whose predictions are pushed toward
statistical independence from a sensitive attribute.  The fairness term is
an f-divergence between the joint distribution of (prediction, group) and
the product of its marginals, optimized through its convex-conjugate dual
so that minibatch gradients stay unbiased; two distributionally robust
variants keep the fairness level under distribution shift.
"""

__version__ = "0.1.0"

from .data import Dataset, flip_sensitive, load_csv, split, standardize, synth_biased, write_csv
from .divergences import (
    DivergenceKind,
    DivergenceSpec,
    conjugate,
    conjugate_grad,
    conjugate_hess,
    divergence_direct,
    divergence_variational,
    dual_domain,
    f_prime,
    f_value,
    optimal_dual,
    parse_divergence,
)
from .estimators import BatchProbs, batch_probs, group_priors, regularizer_terms
from .metrics import (
    MetricsReport,
    accuracy,
    dp_violation,
    eo_violation,
    eodds_violation,
    metrics_report,
    naive_baseline_curve,
)
from .models import (
    ModelParams,
    Prediction,
    forward,
    grad_loss,
    grad_prob,
    init_params,
    load_model,
    loss,
    save_model,
)
from .robust import (
    RobustConfig,
    linf_worst_case,
    ShiftPenalty,
    dro_grad_fields,
    robust_objective_linf,
    robust_train_linf,
    robust_train_smallshift,
    shift_penalty,
)
from .training import TrainerConfig, TrainReport, project_dual, sgda_step, train

__all__ = [
    "__version__",
    "Dataset", "flip_sensitive", "load_csv", "split", "standardize", "synth_biased",
    "write_csv",
    "DivergenceKind", "DivergenceSpec", "conjugate", "conjugate_grad", "conjugate_hess",
    "divergence_direct", "divergence_variational", "dual_domain", "f_prime", "f_value",
    "optimal_dual", "parse_divergence",
    "BatchProbs", "batch_probs", "group_priors", "regularizer_terms",
    "MetricsReport", "accuracy", "dp_violation", "eo_violation", "eodds_violation",
    "metrics_report", "naive_baseline_curve",
    "ModelParams", "Prediction", "forward", "grad_loss", "grad_prob", "init_params",
    "load_model", "loss", "save_model",
    "RobustConfig", "ShiftPenalty", "dro_grad_fields", "linf_worst_case", "robust_objective_linf",
    "robust_train_linf", "robust_train_smallshift", "shift_penalty",
    "TrainerConfig", "TrainReport", "project_dual", "sgda_step", "train",
]
