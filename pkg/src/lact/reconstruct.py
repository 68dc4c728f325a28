"""Gradient-based limited-angle reconstruction.

Each iteration produces an image from the current parameters (DIP network
weights or per-pixel logits), multiplies it by the shifted support mask,
compares the filtered projection of that image with the filtered measured
sinogram under an L1 norm, adds the explicit regularizers and takes one Adam
step on the parameters and the mask offset together.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import tensor as T
from .filtering import FilterSpec, apply_response, filter_op, filter_response
from .neural import Adam, DipNetwork, PatchAutoencoder, load_autoencoder
from .radon import Sinogram, radon_op
from .regularization import RegWeights, combined_regularizer, psr_penalty, tv_value
from .tensor import Tensor, as_tensor, record

logger = logging.getLogger(__name__)

OFFSET_LR_SCALE = 10.0


class ConfigError(ValueError):
    pass


class ReconstructionError(RuntimeError):
    def __init__(self, iteration: int, message: str):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass
class ReconConfig:
    use_dip: bool = True
    alpha: float = 6.0
    lambda_tv: float = 0.01
    lambda_psr: float = 0.2
    patch_size: int | None = 40
    lr: float = 0.001
    n_iter: int = 400
    seed: int = 0
    mask: np.ndarray | None = field(default=None, repr=False, compare=False)
    ae_model_path: str | None = None

    def validate(self) -> None:
        if self.n_iter < 1:
            raise ConfigError(f"n_iter must be >= 1, got {self.n_iter}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.lambda_tv < 0 or self.lambda_psr < 0:
            raise ConfigError("regularization weights must be >= 0")
        if self.lambda_psr > 0 and (self.patch_size is None or self.patch_size < 4):
            raise ConfigError(f"lambda_psr > 0 needs patch_size >= 4, got {self.patch_size}")

    @property
    def weights(self) -> RegWeights:
        return RegWeights(self.lambda_tv, self.lambda_psr)

    def to_dict(self) -> dict:
        d = asdict(replace(self, mask=None))
        d.pop("mask")
        d["has_mask"] = self.mask is not None
        return d


@dataclass
class MaskOffset:
    dx: float = 0.0
    dy: float = 0.0


@dataclass
class ReconResult:
    image: np.ndarray
    loss_trace: list[float]
    data_term: float
    tv_term: float
    psr_term: float
    offset: MaskOffset


# ---------------------------------------------------------------------------
# mask shifting
# ---------------------------------------------------------------------------

def _shift_int(img: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """``out[i, j] = img[i - rows, j - cols]`` with zero fill."""
    n_r, n_c = img.shape
    out = np.zeros_like(img)
    if abs(rows) >= n_r or abs(cols) >= n_c:
        return out
    src_r = slice(max(0, -rows), n_r - max(0, rows))
    dst_r = slice(max(0, rows), n_r - max(0, -rows))
    src_c = slice(max(0, -cols), n_c - max(0, cols))
    dst_c = slice(max(0, cols), n_c - max(0, -cols))
    out[dst_r, dst_c] = img[src_r, src_c]
    return out


def clamp_offset(offset: np.ndarray, side: int) -> np.ndarray:
    limit = side / 4.0
    return np.clip(offset, -limit, limit)


def shift_mask(mask, offset) -> Tensor:
    """Translate ``mask`` by ``offset = (dx, dy)`` pixels with bilinear weights.

    ``out[i, j] = mask(i - dy, j - dx)``; samples outside the image read 0.
    Differentiable with respect to the offset (not the mask). Offsets are
    clamped to ``side / 4``.
    """
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask, dtype=np.float64)
    offset = as_tensor(offset)
    if offset.shape != (2,):
        raise ValueError(f"offset must have shape (2,), got {offset.shape}")
    dx, dy = clamp_offset(offset.data, m.shape[0])
    kx, ky = int(np.floor(dx)), int(np.floor(dy))
    fx, fy = dx - kx, dy - ky
    s00 = _shift_int(m, ky, kx)
    s01 = _shift_int(m, ky, kx + 1)
    s10 = _shift_int(m, ky + 1, kx)
    s11 = _shift_int(m, ky + 1, kx + 1)
    out = (1 - fy) * ((1 - fx) * s00 + fx * s01) + fy * ((1 - fx) * s10 + fx * s11)
    clamped = np.abs(offset.data) > m.shape[0] / 4.0

    def backward(g):
        d_dx = (1 - fy) * (s01 - s00) + fy * (s11 - s10)
        d_dy = (1 - fx) * (s10 - s00) + fx * (s11 - s01)
        grad = np.array([np.sum(g * d_dx), np.sum(g * d_dy)])
        grad[clamped] = 0.0
        return (grad,)

    return record(out, (offset,), backward, "shift_mask")


# ---------------------------------------------------------------------------
# thresholding
# ---------------------------------------------------------------------------

def otsu_threshold(img, bins: int = 256) -> float:
    """Threshold maximising between-class variance of a ``bins``-bin histogram over the value range."""
    v = np.asarray(img, dtype=np.float64).ravel()
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return lo
    hist, edges = np.histogram(v, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    hist = hist.astype(np.float64)
    w0 = np.cumsum(hist)[:-1]
    w1 = v.size - w0
    s0 = np.cumsum(hist * centers)[:-1]
    s1 = np.dot(hist, centers) - s0
    with np.errstate(invalid="ignore", divide="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.nan_to_num(between, nan=-1.0)
    k = int(np.argmax(between))
    return float(edges[k + 1])


def binarize(img) -> np.ndarray:
    """Otsu binarization to {0, 1}; a constant image maps to all zeros."""
    img = np.asarray(img, dtype=np.float64)
    return (img > otsu_threshold(img)).astype(np.float64)


# ---------------------------------------------------------------------------
# main loop
# ---------------------------------------------------------------------------

def data_term_value(image: np.ndarray, sino: Sinogram, alpha: float) -> float:
    """Mean absolute filtered-sinogram residual, evaluated without the tape."""
    from .radon import project

    weights = filter_response(FilterSpec(alpha, sino.geometry.detector_bins))
    s_f = apply_response(sino.values, weights)
    return float(np.abs(s_f - apply_response(project(image, sino.geometry), weights)).mean())


def _resolve_model(cfg: ReconConfig, ae_model: PatchAutoencoder | None) -> PatchAutoencoder | None:
    if cfg.lambda_psr <= 0:
        return None
    if ae_model is None and cfg.ae_model_path:
        ae_model = load_autoencoder(cfg.ae_model_path)
    if ae_model is None:
        raise ConfigError("lambda_psr > 0 requires an autoencoder model (ae_model or ae_model_path)")
    if ae_model.patch_size != cfg.patch_size:
        raise ConfigError(f"autoencoder patch size {ae_model.patch_size} differs from config patch_size {cfg.patch_size}")
    return ae_model


@dataclass
class Objective:
    """The assembled loss: parameters, their learning-rate scales and a forward pass.

    ``forward()`` returns the masked image and the scalar loss, both on the tape.
    """
    params: list[Tensor]
    lr_scales: list[float]
    offset: Tensor | None
    forward: Callable[[], tuple[Tensor, Tensor]]
    model: PatchAutoencoder | None


def build_objective(sino: Sinogram, cfg: ReconConfig, ae_model: PatchAutoencoder | None = None) -> Objective:
    """Validate ``cfg`` and build the loss for ``sino`` without running any step."""
    cfg.validate()
    geom = sino.geometry
    n = geom.image_side
    model = _resolve_model(cfg, ae_model)
    if model is not None:
        if model.patch_size > n:
            raise ConfigError(f"patch size {model.patch_size} exceeds image side {n}")
        model.requires_grad_(False)
    mask = None
    if cfg.mask is not None:
        mask = np.asarray(cfg.mask, dtype=np.float64)
        if mask.shape != geom.image_shape:
            raise ConfigError(f"mask shape {mask.shape} does not match image {geom.image_shape}")

    filt = filter_op(FilterSpec(cfg.alpha, geom.detector_bins))
    proj = radon_op(geom)
    s_f = filt.forward(sino.values)

    if cfg.use_dip:
        net = DipNetwork(geom.sino_shape, n, seed=cfg.seed)
        net_input = net.prepare_input(sino.values)
        params = net.parameters()

        def make_image() -> Tensor:
            return net(net_input)
    else:
        logits = Tensor(np.zeros(geom.image_shape), requires_grad=True, name="logits")
        params = [logits]

        def make_image() -> Tensor:
            return T.sigmoid(logits)

    scales = [1.0] * len(params)
    offset = None
    if mask is not None:
        offset = Tensor(np.zeros(2), requires_grad=True, name="mask_offset")
        params = params + [offset]
        scales.append(OFFSET_LR_SCALE)
    weights = cfg.weights

    def forward() -> tuple[Tensor, Tensor]:
        y = make_image()
        if mask is not None:
            y = y * shift_mask(mask, offset)
        residual = filt(proj(y)) - s_f
        return y, T.reduce_mean(T.absolute(residual)) + combined_regularizer(y, weights, model)

    return Objective(params, scales, offset, forward, model)


def reconstruct(sino: Sinogram, cfg: ReconConfig, ae_model: PatchAutoencoder | None = None,
                callback: Callable[[int, float], None] | None = None) -> ReconResult:
    """Run ``cfg.n_iter`` optimisation steps and return the last image and the loss trace."""
    obj = build_objective(sino, cfg, ae_model)
    n = sino.geometry.image_side
    offset = obj.offset
    opt = Adam(obj.params, lr=cfg.lr, lr_scales=obj.lr_scales)

    trace: list[float] = []
    image = None
    used_offset = None
    for it in range(cfg.n_iter):
        opt.zero_grad()
        try:
            y, loss = obj.forward()
            value = float(loss.data)
            if not np.isfinite(value):
                raise FloatingPointError("loss is not finite")
            loss.backward()
            used_offset = offset.data.copy() if offset is not None else None
            opt.step()
        except FloatingPointError as exc:
            raise ReconstructionError(it, str(exc)) from exc
        if offset is not None:
            offset.data = clamp_offset(offset.data, n)
        trace.append(value)
        image = y.data
        if callback is not None:
            callback(it, value)

    final_offset = MaskOffset(*map(float, clamp_offset(used_offset, n))) if offset is not None else MaskOffset()
    tv = tv_value(image) if cfg.lambda_tv > 0 else 0.0
    psr = float(psr_penalty(image, obj.model).data) if obj.model is not None else 0.0
    return ReconResult(
        image=np.clip(image, 0.0, 1.0),
        loss_trace=trace,
        data_term=data_term_value(image, sino, cfg.alpha),
        tv_term=tv,
        psr_term=psr,
        offset=final_offset,
    )
