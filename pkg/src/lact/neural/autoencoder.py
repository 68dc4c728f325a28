"""Convolutional patch autoencoder and its training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .. import tensor as T
from ..tensor import Tensor
from .layers import Conv2d, Dense, Module
from .losses import bce_with_logits
from .optim import Adam

logger = logging.getLogger(__name__)

ENCODER_CHANNELS = (8, 16, 32)


def latent_dim(patch_size: int) -> int:
    return patch_size // 4


def patch_stride(patch_size: int) -> int:
    """Stride used to cut overlapping training patches."""
    return max(1, patch_size // 5)


def _halve(size: int) -> int:
    # 3x3 kernel, stride 2, padding 1
    return (size - 1) // 2 + 1


class PatchAutoencoder(Module):
    """Symmetric encoder/decoder with three convolutions on each side.

    Encoder: three stride-2 3x3 convolutions (8, 16, 32 channels) and a dense
    map to ``patch_size // 4`` latent units. Decoder: dense map back, then three
    bilinear upsamplings each followed by a 3x3 convolution; sigmoid output.
    """

    def __init__(self, patch_size: int, seed: int = 0):
        if patch_size < 4:
            raise ValueError(f"patch_size must be >= 4, got {patch_size}")
        self.patch_size = int(patch_size)
        self.latent = latent_dim(self.patch_size)
        sizes = [self.patch_size]
        for _ in ENCODER_CHANNELS:
            sizes.append(_halve(sizes[-1]))
        self.sizes = sizes
        rng = np.random.default_rng(seed)
        c1, c2, c3 = ENCODER_CHANNELS
        self.enc1 = Conv2d(rng, 1, c1, 3, padding=1, stride=2)
        self.enc2 = Conv2d(rng, c1, c2, 3, padding=1, stride=2)
        self.enc3 = Conv2d(rng, c2, c3, 3, padding=1, stride=2)
        flat = c3 * sizes[3] * sizes[3]
        self.to_latent = Dense(rng, flat, self.latent)
        self.from_latent = Dense(rng, self.latent, flat)
        self.dec3 = Conv2d(rng, c3, c2, 3, padding=1)
        self.dec2 = Conv2d(rng, c2, c1, 3, padding=1)
        self.dec1 = Conv2d(rng, c1, 1, 3, padding=1)
        self.name_parameters()

    def _check(self, patches: Tensor) -> int:
        p = self.patch_size
        if patches.ndim != 3 or patches.shape[1:] != (p, p):
            raise ValueError(f"expected patches of shape [B, {p}, {p}], got {patches.shape}")
        return patches.shape[0]

    def encode(self, patches) -> Tensor:
        patches = T.as_tensor(patches)
        B = self._check(patches)
        h = T.reshape(patches, (B, 1, self.patch_size, self.patch_size))
        h = T.relu(self.enc1(h))
        h = T.relu(self.enc2(h))
        h = T.relu(self.enc3(h))
        return self.to_latent(T.reshape(h, (B, -1)))

    def decode_logits(self, z: Tensor) -> Tensor:
        B = z.shape[0]
        s = self.sizes
        h = T.relu(self.from_latent(z))
        h = T.reshape(h, (B, ENCODER_CHANNELS[2], s[3], s[3]))
        h = T.relu(self.dec3(T.resize_bilinear(h, s[2], s[2])))
        h = T.relu(self.dec2(T.resize_bilinear(h, s[1], s[1])))
        h = self.dec1(T.resize_bilinear(h, s[0], s[0]))
        return T.reshape(h, (B, s[0], s[0]))

    def logits(self, patches) -> Tensor:
        return self.decode_logits(self.encode(patches))

    def __call__(self, patches) -> Tensor:
        return T.sigmoid(self.logits(patches))


def ae_encode_decode(model: PatchAutoencoder, patches) -> Tensor:
    return model(patches)


def extract_patches(image: np.ndarray, patch_size: int, stride: int) -> np.ndarray:
    """All ``patch_size`` windows at ``stride`` that fit entirely inside ``image``."""
    image = np.asarray(image, dtype=np.float64)
    if patch_size > min(image.shape):
        raise ValueError(f"patch size {patch_size} exceeds image side {min(image.shape)}")
    windows = np.lib.stride_tricks.sliding_window_view(image, (patch_size, patch_size))
    return windows[::stride, ::stride].reshape(-1, patch_size, patch_size).copy()


@dataclass
class TrainingResult:
    model: PatchAutoencoder
    epoch_losses: list[float] = field(default_factory=list)
    train_patches: np.ndarray | None = None
    heldout_patches: np.ndarray | None = None

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def train_autoencoder(images, patch_size: int, seed: int = 0, epochs: int = 100, batch_size: int = 32,
                      lr: float = 1e-3, holdout_frac: float = 0.1) -> TrainingResult:
    """Fit a :class:`PatchAutoencoder` to overlapping patches of ``images``.

    Patches are cut at stride ``patch_size // 5``, shuffled with ``seed``; the
    last ``holdout_frac`` of the shuffled set is held out and never trained on.
    Loss is binary cross-entropy between patches and reconstructions.
    """
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ValueError("at least one source image is required")
    for im in images:
        if im.min() < 0 or im.max() > 1:
            raise ValueError("source images must take values in [0, 1]")
    stride = patch_stride(patch_size)
    patches = np.concatenate([extract_patches(im, patch_size, stride) for im in images])
    rng = np.random.default_rng(seed)
    patches = patches[rng.permutation(len(patches))]
    n_hold = int(round(holdout_frac * len(patches)))
    if n_hold >= len(patches):
        n_hold = 0
    train = patches[:len(patches) - n_hold]
    heldout = patches[len(patches) - n_hold:]

    model = PatchAutoencoder(patch_size, seed=seed)
    opt = Adam(model.parameters(), lr=lr)
    result = TrainingResult(model, train_patches=train, heldout_patches=heldout)
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        total = 0.0
        for start in range(0, len(train), batch_size):
            batch = train[order[start:start + batch_size]]
            opt.zero_grad()
            loss = bce_with_logits(model.logits(Tensor(batch)), batch)
            loss.backward()
            opt.step()
            total += float(loss.data) * len(batch)
        result.epoch_losses.append(total / len(train))
        logger.debug("autoencoder epoch %d/%d loss %.5f", epoch + 1, epochs, result.epoch_losses[-1])
    return result


def reconstruction_error(model: PatchAutoencoder, patches: np.ndarray, batch_size: int = 256) -> float:
    """Mean absolute difference between patches and their reconstructions."""
    errs = []
    for start in range(0, len(patches), batch_size):
        batch = patches[start:start + batch_size]
        errs.append(np.abs(model(Tensor(batch)).data - batch).sum())
    return float(np.sum(errs) / patches.size)
