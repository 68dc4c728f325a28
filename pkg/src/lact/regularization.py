"""Explicit regularizers: anisotropic total variation and patch similarity (PSR)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor, record


@dataclass(frozen=True)
class RegWeights:
    lambda_tv: float = 0.0
    lambda_psr: float = 0.0

    def __post_init__(self):
        if self.lambda_tv < 0 or self.lambda_psr < 0:
            raise ValueError(f"regularization weights must be >= 0, got {self}")


def tv_value(img: np.ndarray) -> float:
    """Plain-array total variation: forward differences, no wraparound, divided by pixel count."""
    img = np.asarray(img, dtype=np.float64)
    return float((np.abs(np.diff(img, axis=1)).sum() + np.abs(np.diff(img, axis=0)).sum()) / img.size)


def total_variation(img) -> Tensor:
    """Differentiable :func:`tv_value` of an ``[n, n]`` image."""
    img = as_tensor(img)
    if img.ndim != 2:
        raise ValueError(f"total_variation expects a 2-d image, got shape {img.shape}")
    y = img.data
    dx = np.diff(y, axis=1)
    dy = np.diff(y, axis=0)
    n_pix = y.size
    value = (np.abs(dx).sum() + np.abs(dy).sum()) / n_pix

    def backward(g):
        sx = np.sign(dx) * (g / n_pix)
        sy = np.sign(dy) * (g / n_pix)
        out = np.zeros_like(y)
        out[:, 1:] += sx
        out[:, :-1] -= sx
        out[1:, :] += sy
        out[:-1, :] -= sy
        return (out,)

    return record(np.asarray(value), (img,), backward, "total_variation")


def split_patches(img, p: int, stride: int | None = None) -> Tensor:
    """Non-overlapping ``p x p`` tiles (row-major); trailing partial tiles are dropped."""
    img = as_tensor(img)
    n_rows, n_cols = img.shape
    stride = p if stride is None else stride
    if stride != p:
        raise ValueError("only non-overlapping tiles (stride == patch size) are supported")
    if p > min(n_rows, n_cols):
        raise ValueError(f"patch size {p} exceeds image side {min(n_rows, n_cols)}")
    kr, kc = n_rows // p, n_cols // p
    h = img if (kr * p, kc * p) == img.shape else img[: kr * p, : kc * p]
    h = T.reshape(h, (kr, p, kc, p))
    h = T.transpose(h, (0, 2, 1, 3))
    return T.reshape(h, (kr * kc, p, p))


def psr_penalty(img, model, p: int | None = None, stride: int | None = None) -> Tensor:
    """Mean absolute difference between the image's tiles and their autoencoded versions."""
    p = model.patch_size if p is None else p
    if p != model.patch_size:
        raise ValueError(f"patch size {p} does not match the autoencoder's {model.patch_size}")
    patches = split_patches(img, p, stride)
    return T.reduce_mean(T.absolute(patches - model(patches)))


def combined_regularizer(img, w: RegWeights, model=None) -> Tensor:
    """``lambda_tv * TV + lambda_psr * PSR``; zero-weighted terms are never evaluated."""
    if w.lambda_psr > 0 and model is None:
        raise ValueError("lambda_psr > 0 requires a patch autoencoder model")
    total: Tensor = Tensor(0.0)
    if w.lambda_tv > 0:
        total = total + w.lambda_tv * total_variation(img)
    if w.lambda_psr > 0:
        total = total + w.lambda_psr * psr_penalty(img, model)
    return total
