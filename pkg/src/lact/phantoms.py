"""Synthetic binary disk phantoms with holes, and limited-angle scan simulation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .radon import Geometry, Sinogram, radon_forward

HOLE_KINDS = ("circle", "polygon", "rectangle")

# scan arc of each difficulty level: 10 deg less per level, level 7 at 30 deg
LEVEL_ARCS = {level: 100.0 - 10.0 * level for level in range(1, 8)}


class PhantomError(RuntimeError):
    pass


@dataclass(frozen=True)
class PhantomSpec:
    side: int = 128
    disk_radius_frac: float = 0.45
    hole_count: tuple[int, int] = (2, 6)
    hole_radius_frac: tuple[float, float] = (0.04, 0.11)
    min_separation: float = 3.0
    kinds: tuple[str, ...] = HOLE_KINDS
    seed: int = 0
    max_attempts: int = 1000

    def __post_init__(self):
        lo, hi = self.hole_count
        if self.side < 4:
            raise ValueError("side must be >= 4")
        if not 0 < self.disk_radius_frac <= 0.5:
            raise ValueError("disk_radius_frac must lie in (0, 0.5]")
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid hole_count range {self.hole_count}")
        unknown = set(self.kinds) - set(HOLE_KINDS)
        if unknown:
            raise ValueError(f"unknown hole kinds {sorted(unknown)}")


@dataclass(frozen=True)
class ScanSpec:
    arc_deg: float = 30.0
    angle_step_deg: float = 0.5
    start_angle_deg: float = 0.0
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.arc_deg < 180:
            raise ValueError(f"arc_deg must lie in [0, 180), got {self.arc_deg}")
        if self.angle_step_deg <= 0:
            raise ValueError("angle_step_deg must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @classmethod
    def level(cls, level: int, **kw) -> "ScanSpec":
        return cls(arc_deg=LEVEL_ARCS[level], **kw)

    def geometry(self, side: int) -> Geometry:
        return Geometry.arc(side, self.arc_deg, self.angle_step_deg, self.start_angle_deg)


def _pixel_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    c = (n - 1) / 2.0
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64)
    return xx - c, yy - c


def _hole_mask(kind: str, x: np.ndarray, y: np.ndarray, cx: float, cy: float, radius: float,
               rng: np.random.Generator) -> np.ndarray:
    dx, dy = x - cx, y - cy
    if kind == "circle":
        return dx * dx + dy * dy <= radius * radius
    phi = rng.uniform(0, 2 * np.pi)
    u = dx * np.cos(phi) + dy * np.sin(phi)
    v = -dx * np.sin(phi) + dy * np.cos(phi)
    if kind == "rectangle":
        # aspect in [0.35, 1]; corners on the bounding circle
        aspect = rng.uniform(0.35, 1.0)
        half_w = radius / np.sqrt(1.0 + aspect * aspect)
        return (np.abs(u) <= half_w) & (np.abs(v) <= aspect * half_w)
    sides = int(rng.integers(3, 9))
    apothem = radius * np.cos(np.pi / sides)
    inside = np.ones_like(u, dtype=bool)
    for k in range(sides):
        a = 2 * np.pi * k / sides
        inside &= u * np.cos(a) + v * np.sin(a) <= apothem
    return inside


def disk_mask(side: int, radius_frac: float = 0.45) -> np.ndarray:
    """Uniform disk without holes, usable as a support mask."""
    x, y = _pixel_grid(side)
    r = radius_frac * side
    return (x * x + y * y <= r * r).astype(np.float64)


def generate_phantom(spec: PhantomSpec) -> np.ndarray:
    """Binary disk (value 1) with non-overlapping holes (value 0).

    Hole centres are rejection-sampled so that each hole's bounding circle
    stays inside the disk and at least ``min_separation`` pixels away from
    the disk edge and from other holes.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.side
    x, y = _pixel_grid(n)
    disk_r = spec.disk_radius_frac * n
    image = (x * x + y * y <= disk_r * disk_r)
    count = int(rng.integers(spec.hole_count[0], spec.hole_count[1] + 1))
    placed: list[tuple[float, float, float]] = []
    attempts = 0
    while len(placed) < count:
        attempts += 1
        if attempts > spec.max_attempts:
            raise PhantomError(
                f"could not place {count} holes after {spec.max_attempts} attempts; "
                "use fewer or smaller holes, or a smaller min_separation"
            )
        r = rng.uniform(*spec.hole_radius_frac) * n
        reach = disk_r - r - spec.min_separation
        if reach <= 0:
            continue
        rho = reach * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        cx, cy = rho * np.cos(ang), rho * np.sin(ang)
        if any(np.hypot(cx - px, cy - py) < r + pr + spec.min_separation for px, py, pr in placed):
            continue
        placed.append((cx, cy, r))
    for cx, cy, r in placed:
        kind = spec.kinds[int(rng.integers(len(spec.kinds)))]
        image &= ~_hole_mask(kind, x, y, cx, cy, r, rng)
    return image.astype(np.float64)


def generate_phantoms(count: int, side: int = 128, seed: int = 0, **kw) -> list[np.ndarray]:
    """``count`` phantoms with seeds derived from ``seed``."""
    seeds = np.random.SeedSequence(seed).generate_state(count)
    return [generate_phantom(PhantomSpec(side=side, seed=int(s), **kw)) for s in seeds]


def simulate_scan(image: np.ndarray, scan: ScanSpec) -> Sinogram:
    """Project ``image`` over the scan's arc and add seeded Gaussian noise.

    The noise standard deviation is ``noise_sigma * max(S)``.
    """
    image = np.asarray(image, dtype=np.float64)
    geom = scan.geometry(image.shape[0])
    sino = radon_forward(image, geom)
    if scan.noise_sigma > 0:
        rng = np.random.default_rng(scan.seed)
        scale = scan.noise_sigma * float(np.max(sino.values))
        sino = Sinogram(sino.values + rng.normal(0.0, scale, sino.values.shape), geom)
    return sino
