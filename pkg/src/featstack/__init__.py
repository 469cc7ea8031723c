"""featstack: stack features from multiple pretrained networks, train
linear classifier heads over them, sweep hyperparameters, ensemble subset
models, and jointly train a shared trunk on several tasks at once."""

from .classifier import (
    EpochStats,
    SplitData,
    TrainConfig,
    TrainedModel,
    affine_scores,
    dropout_apply,
    grad_check,
    load_model,
    predict,
    save_model,
    softmax_loss_grad,
    svm_loss_grad,
    train_linear,
)
from .ensemble import EnsembleResult, ScoreMatrix, mean_scores, stack_ensemble
from .errors import DivergedError, FeatstackError, FormatError, ValidationError
from .joint import (
    JointModel,
    Task,
    Trunk,
    TrunkConfig,
    finetune_single,
    init_trunk,
    interleave_batches,
    joint_train,
    task_from_bundle,
    transfer_eval,
    trunk_forward,
)
from .reporting import ConfusionMatrix, DegradationTable, confusion, degradation_table, emit
from .stacking import (
    StackSpec,
    accuracy_weights,
    enumerate_subsets,
    l2_normalize_rows,
    stack,
    stack_bundle,
)
from .store import (
    DatasetBundle,
    FeatureMatrix,
    SynthSpec,
    generate_synthetic,
    load_bundle,
    read_feature_file,
    stratified_split,
    write_bundle,
    write_feature_file,
)
from .sweep import GridSpec, SweepResult, grid_configs, run_sweep

__version__ = "0.1.0"
