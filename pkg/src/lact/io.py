"""Readers and writers for matrices, sinograms and images.

Matrices are plain comma-separated text, one row per line. Sinograms add a
``<name>.meta`` sidecar describing the scan geometry. Images are written either
as CSV (lossless) or as 8-bit binary PGM for viewing.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .radon import Geometry, Sinogram

META_KEYS = ("n_angles", "angle_start_deg", "angle_step_deg", "detector_bins")


class ParseError(ValueError):
    """Malformed input file.

    Attributes
    ----------
    path : str
    line : int or None
        1-based line number of the offending line, when one applies.
    """

    def __init__(self, path, message: str, line: int | None = None):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


# ---------------------------------------------------------------------------
# CSV matrices
# ---------------------------------------------------------------------------

def write_matrix_csv(path, matrix) -> None:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    lines = [",".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise ParseError(path, "file not found") from None
    rows: list[list[float]] = []
    width = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        fields = raw.split(",")
        try:
            row = [float(f) for f in fields]
        except ValueError:
            raise ParseError(path, f"non-numeric field in {raw.strip()!r}", lineno) from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(path, f"ragged row: {len(row)} fields, expected {width}", lineno)
        rows.append(row)
    if not rows:
        raise ParseError(path, "no data rows")
    return np.array(rows, dtype=np.float64)


# ---------------------------------------------------------------------------
# sinograms
# ---------------------------------------------------------------------------

def meta_path(path) -> Path:
    return Path(path).with_suffix(".meta")


def write_sinogram(path, sino: Sinogram) -> None:
    geom = sino.geometry
    angles = np.asarray(geom.angles_deg)
    step = float(angles[1] - angles[0]) if len(angles) > 1 else 0.0
    write_matrix_csv(path, sino.values)
    meta = {
        "n_angles": geom.n_angles,
        "angle_start_deg": repr(float(angles[0])),
        "angle_step_deg": repr(step),
        "detector_bins": geom.detector_bins,
    }
    meta_path(path).write_text("".join(f"{k}={meta[k]}\n" for k in META_KEYS))


def read_meta(path) -> dict[str, float]:
    mpath = meta_path(path)
    if not mpath.exists():
        raise ParseError(mpath, "missing sinogram sidecar")
    out: dict[str, float] = {}
    for lineno, raw in enumerate(mpath.read_text().splitlines(), start=1):
        if not raw.strip():
            continue
        key, sep, value = raw.partition("=")
        key = key.strip()
        if not sep or key not in META_KEYS:
            raise ParseError(mpath, f"unexpected line {raw.strip()!r}", lineno)
        try:
            out[key] = float(value)
        except ValueError:
            raise ParseError(mpath, f"bad value for {key}", lineno) from None
    missing = [k for k in META_KEYS if k not in out]
    if missing:
        raise ParseError(mpath, f"missing keys: {', '.join(missing)}")
    return out


def angles_from_meta(meta: dict[str, float]) -> tuple[float, ...]:
    k = np.arange(int(meta["n_angles"]))
    return tuple(float(a) for a in meta["angle_start_deg"] + k * meta["angle_step_deg"])


def read_sinogram(path, image_side: int | None = None) -> Sinogram:
    """Load a sinogram and its geometry. ``image_side`` defaults to the detector bin count."""
    meta = read_meta(path)
    values = read_matrix_csv(path)
    n_angles, bins = int(meta["n_angles"]), int(meta["detector_bins"])
    if values.shape != (n_angles, bins):
        raise ParseError(path, f"matrix shape {values.shape} disagrees with sidecar ({n_angles}, {bins})")
    geom = Geometry(image_side or bins, angles_from_meta(meta), detector_bins=bins)
    return Sinogram(values, geom)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def to_bytes(image) -> np.ndarray:
    """Map [0, 1] values to bytes with ``floor(255 v + 0.5)``, clipped."""
    v = np.floor(255.0 * np.asarray(image, dtype=np.float64) + 0.5)
    return np.clip(v, 0, 255).astype(np.uint8)


def write_pgm(path, image) -> None:
    data = to_bytes(image)
    if data.ndim != 2:
        raise ValueError(f"expected a 2-D image, got shape {data.shape}")
    h, w = data.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a binary PGM written by :func:`write_pgm`; returns values in [0, 1]."""
    path = Path(path)
    buf = path.read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < len(buf) and buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ParseError(path, "truncated header")
        tokens.append(buf[start:pos])
    if tokens[0] != b"P5":
        raise ParseError(path, f"bad magic {tokens[0]!r}, expected b'P5'", 1)
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise ParseError(path, "non-integer header field") from None
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise ParseError(path, f"bad dimensions {w}x{h} or maxval {maxval}")
    pos += 1  # single whitespace after maxval
    data = np.frombuffer(buf[pos:pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise ParseError(path, f"expected {w * h} pixel bytes, found {data.size}")
    return data.reshape(h, w).astype(np.float64) / maxval


def write_image(path, image) -> None:
    """Write an image; ``.pgm`` selects PGM, anything else CSV."""
    if Path(path).suffix.lower() == ".pgm":
        write_pgm(path, image)
    else:
        write_matrix_csv(path, image)


def read_image(path) -> np.ndarray:
    if Path(path).suffix.lower() == ".pgm":
        return read_pgm(path)
    return read_matrix_csv(path)


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
