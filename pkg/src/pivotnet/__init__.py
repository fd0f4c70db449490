"""Adversarially trained classifiers that ignore a nuisance value.

A classifier f is trained jointly against an adversary r that tries to
recover the nuisance z from the classifier's score.  Weighting the
adversary's likelihood into the classifier's objective trades a little
accuracy for scores whose distribution no longer depends on z.
"""

__version__ = "0.1.0"

from .adversary import (
    CategoricalParams,
    HeadSpec,
    MixtureParams,
    adversary_loss,
    cat_nll,
    init_adversary,
    mdn_head,
    mdn_nll,
)
from .checkpoint import load_net, save_net
from .datasets import (
    Sample,
    SurrogateSpec,
    ToySpec,
    generate_surrogate_physics,
    generate_toy,
    read_dataset,
    surrogate_conditional_sampler,
    toy_conditional_sampler,
    write_dataset,
)
from .errors import (
    ConfigError,
    DataError,
    EvaluationError,
    NumericalError,
    PivotnetError,
    TrainingError,
)
from .evaluation import (
    GAUSSIAN_UNIT_ENTROPY,
    ams,
    ams_scan,
    conditional_score_density,
    entropy_gaussian,
    estimate_h_y_given_x,
    ks_distance,
    pivotality_report,
)
from .nets import (
    DenseNet,
    bce_with_logits,
    finite_difference_gradient,
    forward,
    forward_batch,
    init_params,
    loss_and_grad,
    with_params,
)
from .optim import OptimizerState, make_optimizer, optimizer_step
from .training import (
    RunMetrics,
    TrainConfig,
    TrainResult,
    adversarial_train,
    pretrain_classifier,
    run_training,
    sample_minibatch,
)

__all__ = [
    "__version__",
    "CategoricalParams",
    "ConfigError",
    "DataError",
    "DenseNet",
    "EvaluationError",
    "GAUSSIAN_UNIT_ENTROPY",
    "HeadSpec",
    "MixtureParams",
    "NumericalError",
    "OptimizerState",
    "PivotnetError",
    "RunMetrics",
    "Sample",
    "SurrogateSpec",
    "ToySpec",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "adversarial_train",
    "adversary_loss",
    "ams",
    "ams_scan",
    "bce_with_logits",
    "cat_nll",
    "conditional_score_density",
    "entropy_gaussian",
    "estimate_h_y_given_x",
    "finite_difference_gradient",
    "forward",
    "forward_batch",
    "generate_surrogate_physics",
    "generate_toy",
    "init_adversary",
    "init_params",
    "ks_distance",
    "load_net",
    "loss_and_grad",
    "make_optimizer",
    "mdn_head",
    "mdn_nll",
    "optimizer_step",
    "pivotality_report",
    "pretrain_classifier",
    "read_dataset",
    "run_training",
    "sample_minibatch",
    "save_net",
    "surrogate_conditional_sampler",
    "toy_conditional_sampler",
    "with_params",
    "write_dataset",
]
