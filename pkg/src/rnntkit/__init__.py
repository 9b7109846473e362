"""Multi-dialect, dual-orthography neural transducer toolkit.

A small numpy implementation of a transducer ASR system with dialect
conditioning: exact and pruned lattice losses with analytic gradients, a
shared encoder with per-task stateless predictors and joint networks, an
auxiliary attention-pooled dialect classifier, dialect-embedding input
augmentation, dialect-token target conditioning, greedy decoding with a
forced-dialect stress protocol, error-rate and efficiency metrics, and a
synthetic dialect-balanced corpus generator.
"""

from .autodiff import Graph, Tensor, grad_check, no_grad, parameter
from .data import Dataset, SynthSpec, Utterance, gen_corpus, read_dataset, subset_by_dialect, write_dataset
from .decode import DecodeOptions, Hypothesis, StressProtocol, greedy_decode, predict_dialect, stress_test
from .dialect import (
    ADCParams,
    ConditionedTarget,
    DialectId,
    VocabularyDescriptor,
    adc_forward,
    adc_loss,
    combine_losses,
    condition_targets,
    dii_augment,
    extend_vocab,
    strip_dialect_tokens,
)
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    MetricError,
    NumericError,
    ShapeError,
    SizeError,
    ToolkitError,
)
from .experiment import bench_rtf, build_model_from_config, evaluate_model, load_model_params, train_model
from .metrics import EditOps, EfficiencyReport, corpus_rate, count_params, dialect_accuracy, edit_ops, rtfx
from .model import (
    DialectMode,
    EncoderConfig,
    MultiTaskModel,
    PredictorConfig,
    build_model,
    encode,
    model_parameters,
    multitask_forward,
    predict,
)
from .optim import AdamState, adam_step
from .transducer import (
    INF_LOSS,
    JointLogProbGrid,
    JointParams,
    LossResult,
    PruneRange,
    compute_prune_range,
    enumerate_alignments,
    joint_forward,
    rnnt_loss_full,
    rnnt_loss_pruned,
)

__version__ = "0.1.0"
