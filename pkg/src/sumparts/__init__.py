"""sumparts: faithful-by-construction grouped feature attributions, with
perturbation faithfulness metrics and LP certificates of per-feature
attribution error lower bounds."""

from .model import (
    Backbone,
    GroupedAttribution,
    GroupGenParams,
    GroupSelectParams,
    Segmentation,
    embed_groups,
    generate_groups,
    identity_backbone,
    linear_backbone,
    select_groups,
    sop_forward,
)
from .ops import (
    attention_weights,
    finite_diff_grad,
    softmax,
    sparsemax,
    sparsemax_vjp,
)
from .training import TrainConfig, TrainResult, train, training_accuracy

__version__ = "0.1.0"
