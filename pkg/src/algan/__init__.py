"""ALGAN: GAN-based one-class anomaly detection with anomalous latents and a sample buffer.

Everything runs on a small numpy-backed reverse-mode autodiff engine.
"""

from .config import ExperimentConfig, load_config
from .core import LatentSpec, RunReport, SampleBuffer, TrainConfig, sample_latents, train
from .data import DataSplit, SyntheticSpec, gen_toy2d, load_features, make_synthetic, split
from .errors import (AlganError, ConfigError, ContractError, DimensionError, DomainError, MetricError,
                     ParseError, TrainingError, ValidationError)
from .evaluation import anomaly_score, auroc, roc_curve, youden_threshold
from .nn import Network, build_discriminator, build_generator, init_params, load_checkpoint, save_checkpoint
from .tensor import Tensor

__version__ = "0.1.0"
