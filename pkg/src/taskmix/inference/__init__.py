"""Variational task inference: encoder, decoders, and their losses."""

from taskmix.inference.gaussians import gaussian_product, sample_z
from taskmix.inference.losses import (LossWeights, classification_accuracy,
                                      classification_loss, euclid_loss, kl_loss,
                                      prediction_loss, total_inference_loss)
from taskmix.inference.networks import Decoders, TaskEncoder

__all__ = [
    "Decoders", "LossWeights", "TaskEncoder", "classification_accuracy",
    "classification_loss", "euclid_loss", "gaussian_product", "kl_loss",
    "prediction_loss", "sample_z", "total_inference_loss",
]
