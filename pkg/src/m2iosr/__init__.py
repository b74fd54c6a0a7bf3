"""Open-set recognition by multi-scale mutual-information maximisation.

An encoder-only classifier is trained with Jensen-Shannon MI objectives on
global and local (feature map, latent) pairs, a class-conditional Gaussian
KL penalty and cross-entropy; unknowns are rejected by thresholding the
maximum softmax probability.
"""

__version__ = "0.1.0"

from .encoder import EncoderConfig, FeatureTaps, LatentStats, sample_latent
from .errors import CheckpointError, ConfigError, DataError, M2IOSRError, NumericError
from .evaluation import EvalReport, macro_f1, openness, sweep_openness
from .inference import UNKNOWN, OpenSetPrediction, predict
from .mi import jsd_objective, local_mi_loss, make_negative_pairing
from .model import OpenSetModel
from .trainer import LossBreakdown, TrainConfig, Trainer, build_model, train

__all__ = [
    "EncoderConfig",
    "FeatureTaps",
    "LatentStats",
    "sample_latent",
    "CheckpointError",
    "ConfigError",
    "DataError",
    "M2IOSRError",
    "NumericError",
    "EvalReport",
    "macro_f1",
    "openness",
    "sweep_openness",
    "UNKNOWN",
    "OpenSetPrediction",
    "predict",
    "jsd_objective",
    "local_mi_loss",
    "make_negative_pairing",
    "OpenSetModel",
    "LossBreakdown",
    "TrainConfig",
    "Trainer",
    "build_model",
    "train",
]
