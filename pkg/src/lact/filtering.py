"""Sinogram filtering with a ramp filter modulated by a squared sinc.

Each projection (row) is Fourier transformed along the detector axis,
multiplied by ``r_alpha(omega)`` and transformed back. ``omega`` is the
angular frequency of the FFT bin, ``2*pi*k/D`` wrapped to ``[-pi, pi)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import register_linear_op


@dataclass(frozen=True)
class FilterSpec:
    alpha: float
    detector_bins: int

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.detector_bins < 2:
            raise ValueError("detector_bins must be >= 2")


def frequencies(detector_bins: int) -> np.ndarray:
    """Angular frequency of each FFT bin, in numpy's FFT order."""
    return 2.0 * np.pi * np.fft.fftfreq(detector_bins)


def response(alpha: float, omega) -> np.ndarray:
    """``|2/alpha * sin(alpha*omega/2)| * sinc^2``, equal to ``|omega|`` at ``alpha == 0``.

    Evaluated as ``|omega| * |sinc|^3``, which is the same expression without the
    ``1/alpha`` overflow for tiny ``alpha``.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if alpha == 0:
        return np.abs(omega)
    # np.sinc(x) = sin(pi x)/(pi x) handles omega == 0
    sinc = np.sinc(alpha * omega / (2.0 * np.pi))
    return np.abs(omega) * np.abs(sinc) ** 3


def filter_response(spec: FilterSpec) -> np.ndarray:
    return response(spec.alpha, frequencies(spec.detector_bins))


def apply_response(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Multiply the row spectra of ``values`` by ``weights`` (FFT order)."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != weights.shape[0]:
        raise ValueError(f"row length {values.shape[-1]} does not match filter length {weights.shape[0]}")
    return np.real(np.fft.ifft(np.fft.fft(values, axis=-1) * weights, axis=-1))


def apply_filter(sino, spec: FilterSpec):
    """Filter every projection. Accepts a raw array or a :class:`~lact.radon.Sinogram`."""
    from .radon import Sinogram

    if isinstance(sino, Sinogram):
        return Sinogram(apply_response(sino.values, filter_response(spec)), sino.geometry)
    return apply_response(sino, filter_response(spec))


def filter_op(spec: FilterSpec):
    """Differentiable filter; the operator is self-adjoint so it is its own backward."""
    weights = filter_response(spec)
    fn = lambda v: apply_response(v, weights)  # noqa: E731
    return register_linear_op(fn, fn, name=f"filter(alpha={spec.alpha:g})")
