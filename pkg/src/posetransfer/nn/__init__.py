"""Minimal numpy engine for the temporal CNNs: layers, loss, RMSProp, training."""
from .engine import backward, forward, init_params, layer_shapes, param_shapes
from .graph import (
    Branch,
    Dense,
    Dropout,
    Flatten,
    NetworkGraph,
    Sequential,
    SoftmaxOutput,
    TemporalConv,
    graph_from_dict,
    graph_to_dict,
)
from .layers import (
    ShapeError,
    conv_forward,
    dense_forward,
    dropout_apply,
    gaussian_noise_augment,
    orthonormal_init,
    softmax,
    softmax_xent,
)
from .optim import OptimizerState, TrainConfig, rmsprop_step
from .training import (
    LEARNING_RATES,
    GradCheckReport,
    History,
    TrainingError,
    gradient_check,
    predict,
    score_wf1,
    select_learning_rate,
    train,
)
