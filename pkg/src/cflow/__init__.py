"""Conditional segmentation sampling with flow-transformed latent
posteriors: a compact, numpy-only research toolkit."""

from . import tensor
from .data import DatasetSplit, GenConfig, MultiRaterSample, bimodal_preset, generate
from .flows import Context, FlowChain, GlowStep, PlanarStep
from .gaussian import DiagGaussian, kl_diag, log_prob, sample_reparam
from .inference import evaluate, sample
from .metrics import MetricsReport, dice, estimate_cll, ged_squared, iou_distance
from .nets import ModelBundle, ModelConfig, build_model, decode, encode, prior
from .objective import LossBreakdown, cflow_loss, cvae_loss, recon_loglik
from .tensor import Tape, Tensor
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "tensor", "Tensor", "Tape",
    "DiagGaussian", "sample_reparam", "log_prob", "kl_diag",
    "Context", "FlowChain", "PlanarStep", "GlowStep",
    "ModelBundle", "ModelConfig", "build_model", "encode", "prior", "decode",
    "LossBreakdown", "cflow_loss", "cvae_loss", "recon_loglik",
    "MetricsReport", "iou_distance", "dice", "ged_squared", "estimate_cll",
    "GenConfig", "MultiRaterSample", "DatasetSplit", "generate", "bimodal_preset",
    "TrainConfig", "train", "sample", "evaluate",
    "__version__",
]
