"""Learned beamforming: CSI-Net, Power-Net, recovery layer and training."""
from .models import BeamModel, Forward, NetSpec, Normalizer, flatten_complex
from .training import (LossWeights, TrainConfig, TrainData, TrainResult, hybrid_loss, predict,
                       rate_node, train, validate)

__all__ = [
    "BeamModel", "Forward", "NetSpec", "Normalizer", "flatten_complex",
    "LossWeights", "TrainConfig", "TrainData", "TrainResult", "hybrid_loss", "predict",
    "rate_node", "train", "validate",
]
