"""Semi-supervised classifier toolkit.

Adversarial pretraining on unlabelled images hands its discriminator to a
short supervised fine-tuning pass, so a scarce labelled pool is enough to
train a full convolutional classifier. Ships with Sobel edge preprocessing,
GP and supervised-CNN baselines, a synthetic corpus generator, and a CLI
that writes delimited reports with figure twins.
"""

from .autodiff import (
    Tape,
    Tensor,
    add,
    backward,
    bce_loss,
    conv2d,
    conv2d_transpose,
    dense,
    dropout,
    leaky_relu,
    parameter,
    reshape,
    scale,
    sigmoid,
    zero_grad,
)
from .baselines import (
    GPHyperparams,
    GPModel,
    cnn_train_supervised,
    gp_fit_laplace,
    gp_predict,
    gp_select_hyperparameters,
    se_kernel,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .dataset import (
    DatasetSplit,
    Sample,
    generate_synthetic,
    label_audit,
    load_manifest,
    partition_dataset,
    save_manifest,
)
from .experiment import RunRecord, emit_gradcam_gallery, run_experiment, sweep_labelled_fraction
from .gradcam import gradcam
from .imaging import (
    GrayImage,
    normalize_unit,
    preprocess_image,
    read_pgm,
    resize_bilinear,
    sobel_magnitude,
    write_pgm,
)
from .metrics import (
    ConfusionCounts,
    MetricsReport,
    RocCurve,
    compute_metrics,
    confusion_counts,
    roc_auc,
)
from .networks import ModelParams, init_cnn, init_models
from .optim import AdamState, adam_step, init_adam
from .training import (
    TrainConfig,
    classify,
    gan_train_step,
    minimax_objective,
    supervised_finetune,
    uncertainty_score,
    unsupervised_train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "ConfusionCounts",
    "DatasetSplit",
    "ExperimentConfig",
    "GPHyperparams",
    "GPModel",
    "GrayImage",
    "MetricsReport",
    "ModelParams",
    "RocCurve",
    "RunRecord",
    "Sample",
    "Tape",
    "Tensor",
    "TrainConfig",
    "adam_step",
    "add",
    "backward",
    "bce_loss",
    "classify",
    "cnn_train_supervised",
    "compute_metrics",
    "confusion_counts",
    "conv2d",
    "conv2d_transpose",
    "dense",
    "dropout",
    "emit_gradcam_gallery",
    "gan_train_step",
    "generate_synthetic",
    "gp_fit_laplace",
    "gp_predict",
    "gp_select_hyperparameters",
    "gradcam",
    "init_adam",
    "init_cnn",
    "init_models",
    "label_audit",
    "leaky_relu",
    "load_checkpoint",
    "load_config",
    "load_manifest",
    "minimax_objective",
    "normalize_unit",
    "parameter",
    "partition_dataset",
    "preprocess_image",
    "read_pgm",
    "reshape",
    "resize_bilinear",
    "roc_auc",
    "run_experiment",
    "save_checkpoint",
    "save_manifest",
    "scale",
    "se_kernel",
    "sigmoid",
    "sobel_magnitude",
    "supervised_finetune",
    "sweep_labelled_fraction",
    "uncertainty_score",
    "unsupervised_train",
    "write_pgm",
    "zero_grad",
]
