"""Dropout networks, an expectation-linearization training penalty, and tools to measure the inference gap."""

from .config import ExperimentConfig, load_config, parse_config
from .data import Dataset, load_idx, split, synth_gaussians, write_idx
from .errors import (
    CapacityError,
    ConfigError,
    ConvergenceError,
    DimensionError,
    DomainError,
    EldropError,
    FormatError,
    NumericError,
    TrainingError,
)
from .inference import InferenceConfig, error_rate, gap_statistics, measure_gap, predict, predict_batch
from .network import (
    DenseLayer,
    MaskSample,
    Network,
    enumerate_expectation,
    forward_deterministic,
    forward_stochastic,
    load_network,
    sample_mask,
    save_network,
)
from .objective import check_gradients, el_penalty_exact, el_penalty_mc, loss_and_grad, nll_loss
from .theory import (
    BoundInputs,
    GapReport,
    check_layered_bound,
    deviation_bound,
    jensen_check,
    layered_bound,
    likelihood_gap,
    penalty_exact,
    penalty_mc,
    scale_to_linearize,
)
from .trainer import EpochRecord, TrainConfig, TrainLog, train

__version__ = "0.1.0"
