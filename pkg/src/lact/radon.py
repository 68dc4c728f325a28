"""Parallel-beam Radon transform, its exact adjoint, and filtered back projection.

The projector is an explicit sparse matrix. Each detector bin's ray is sampled
at ``ray_step`` intervals inside the image's inscribed circle; every sample
bilinearly interpolates the four surrounding pixels and contributes
``ray_step`` times the weight. The adjoint is the transpose of the same matrix.

Coordinates: pixel ``(i, j)`` sits at ``x = j - c``, ``y = i - c`` with
``c = (n - 1) / 2``. At angle ``theta`` the detector coordinate is
``s = x cos(theta) + y sin(theta)`` and rays run along ``(-sin, cos)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .tensor import register_linear_op


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Geometry:
    image_side: int
    angles_deg: tuple[float, ...]
    detector_bins: int | None = None
    ray_step: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))
        if self.detector_bins is None:
            object.__setattr__(self, "detector_bins", int(self.image_side))
        if self.image_side < 2 or self.detector_bins < 2:
            raise GeometryError(f"image_side and detector_bins must be >= 2, got {self.image_side}, {self.detector_bins}")
        if not self.angles_deg:
            raise GeometryError("at least one projection angle is required")
        a = np.asarray(self.angles_deg)
        if np.any(np.diff(a) <= 0):
            raise GeometryError("angles must be strictly increasing")
        if a[-1] - a[0] >= 180.0:
            raise GeometryError(f"angular span {a[-1] - a[0]:g} deg must be < 180")
        if self.ray_step <= 0:
            raise GeometryError("ray_step must be positive")

    @property
    def n_angles(self) -> int:
        return len(self.angles_deg)

    @property
    def sino_shape(self) -> tuple[int, int]:
        return self.n_angles, self.detector_bins

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.image_side, self.image_side

    @classmethod
    def arc(cls, image_side: int, arc_deg: float, step_deg: float = 0.5, start_deg: float = 0.0,
            **kw) -> "Geometry":
        """Angles ``start, start + step, ...`` spanning ``arc_deg`` inclusive."""
        count = int(round(arc_deg / step_deg)) + 1
        return cls(image_side, tuple(start_deg + step_deg * np.arange(count)), **kw)


@dataclass
class Sinogram:
    values: np.ndarray
    geometry: Geometry = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != self.geometry.sino_shape:
            raise GeometryError(f"sinogram shape {self.values.shape} does not match geometry {self.geometry.sino_shape}")


@lru_cache(maxsize=16)
def system_matrix(geom: Geometry) -> sp.csr_matrix:
    """Sparse ``(A*D, n*n)`` matrix of the discretised line integrals."""
    n, D, step = geom.image_side, geom.detector_bins, geom.ray_step
    c = (n - 1) / 2.0
    radius = n / 2.0
    m = max(1, int(round(2 * radius / step)))
    t = (np.arange(m) - (m - 1) / 2.0) * step
    s = np.arange(D) - (D - 1) / 2.0
    S, T = np.meshgrid(s, t, indexing="ij")
    inside = S * S + T * T <= radius * radius
    S, T = S[inside], T[inside]
    bins = np.broadcast_to(np.arange(D)[:, None], (D, m))[inside]

    rows, cols, vals = [], [], []
    for a, theta in enumerate(np.deg2rad(geom.angles_deg)):
        ct, st = np.cos(theta), np.sin(theta)
        xf = S * ct - T * st + c
        yf = S * st + T * ct + c
        j0 = np.floor(xf).astype(np.int64)
        i0 = np.floor(yf).astype(np.int64)
        fx = xf - j0
        fy = yf - i0
        r = a * D + bins
        for di, dj, w in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                          (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
            ii, jj = i0 + di, j0 + dj
            ok = (ii >= 0) & (ii < n) & (jj >= 0) & (jj < n) & (w > 0)
            rows.append(r[ok])
            cols.append(ii[ok] * n + jj[ok])
            vals.append(w[ok] * step)
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(geom.n_angles * D, n * n),
    )
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


@lru_cache(maxsize=16)
def _transpose(geom: Geometry) -> sp.csr_matrix:
    return system_matrix(geom).T.tocsr()


def _check_image(image: np.ndarray, geom: Geometry) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape != geom.image_shape:
        raise GeometryError(f"image shape {image.shape} does not match geometry {geom.image_shape}")
    return image


def _check_sino(values: np.ndarray, geom: Geometry) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != geom.sino_shape:
        raise GeometryError(f"sinogram shape {values.shape} does not match geometry {geom.sino_shape}")
    return values


def project(image: np.ndarray, geom: Geometry) -> np.ndarray:
    """Forward projection on raw arrays: ``(n, n) -> (A, D)``."""
    image = _check_image(image, geom)
    return (system_matrix(geom) @ image.ravel()).reshape(geom.sino_shape)


def backproject(values: np.ndarray, geom: Geometry) -> np.ndarray:
    """Exact transpose of :func:`project`: ``(A, D) -> (n, n)``."""
    values = _check_sino(values, geom)
    return (_transpose(geom) @ values.ravel()).reshape(geom.image_shape)


def radon_forward(image, geom: Geometry) -> Sinogram:
    return Sinogram(project(image, geom), geom)


def radon_adjoint(sino: Sinogram | np.ndarray, geom: Geometry) -> np.ndarray:
    if isinstance(sino, Sinogram):
        if sino.geometry != geom:
            raise GeometryError("sinogram geometry differs from the requested geometry")
        sino = sino.values
    return backproject(sino, geom)


def radon_op(geom: Geometry):
    """Differentiable projector ``Tensor[n, n] -> Tensor[A, D]`` for the autodiff tape."""
    return register_linear_op(lambda x: project(x, geom), lambda y: backproject(y, geom), name="radon")


def fbp_reconstruct(sino: Sinogram, geom: Geometry | None = None, filter_alpha: float = 0.0) -> np.ndarray:
    """Filtered back projection, clipped at zero."""
    from .filtering import FilterSpec, apply_filter

    geom = sino.geometry if geom is None else geom
    values = _check_sino(sino.values, geom)
    filtered = apply_filter(values, FilterSpec(filter_alpha, geom.detector_bins))
    image = backproject(filtered, geom) * (np.pi / (2.0 * geom.n_angles))
    return np.clip(image, 0.0, None)

