"""Networks, losses and the optimizer used by the reconstruction pipeline."""
from .autoencoder import (PatchAutoencoder, TrainingResult, ae_encode_decode, extract_patches,
                          latent_dim, patch_stride, reconstruction_error, train_autoencoder)
from .dip import DipArchitecture, DipNetwork, dip_forward
from .losses import bce_with_logits, binary_cross_entropy
from .optim import Adam, AdamState, adam_step
from .serialize import load_autoencoder, save_autoencoder

__all__ = [
    "Adam", "AdamState", "DipArchitecture", "DipNetwork", "PatchAutoencoder", "TrainingResult",
    "adam_step", "ae_encode_decode", "bce_with_logits", "binary_cross_entropy", "dip_forward",
    "extract_patches", "latent_dim", "load_autoencoder", "patch_stride", "reconstruction_error",
    "save_autoencoder", "train_autoencoder",
]
