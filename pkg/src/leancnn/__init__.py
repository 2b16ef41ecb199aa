"""Small numpy CNN framework with an analytic parameter/FLOP cost model."""

from .arch import (
    ArchitectureError,
    ArchitectureSpec,
    HeadConfig,
    LayerSpec,
    ResidualBlockSpec,
    build_custom_cnn,
    build_resnet50,
    expand_block,
    infer_shapes,
    parse_architecture,
    serialize_architecture,
)
from .cost import CostReport, analyze, compare, conv_flops, dense_flops, layer_params
from .data import (
    Dataset,
    augment,
    compute_stats,
    load_dataset,
    normalize,
    resize,
    split,
    synth_dataset,
)
from .engine import backward, forward, residual_block_forward
from .metrics import accuracy, confusion_matrix, evaluation_report, precision_recall_f1, roc_auc
from .params import LayerParams, ParameterSet, init_parameters, set_trainable
from .tensor import ConvGeometry, ShapeError, conv2d_forward, dense_forward, maxpool2d_forward, relu, softmax
from .train import (
    AdamConfig,
    AdamState,
    TrainConfig,
    TrainHistory,
    adam_step,
    bce_loss,
    categorical_ce,
    grad_check,
    train,
)
from .weights_io import load_weights, save_weights

__version__ = "0.1.0"
