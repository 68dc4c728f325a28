"""Matthews correlation coefficient for binary reconstructions."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _as_binary(img, label: str) -> np.ndarray:
    arr = np.asarray(img)
    if arr.dtype == bool:
        return arr
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{label} image is not binary (values other than 0 and 1 present)")
    return arr.astype(bool)


def confusion(pred, truth) -> ConfusionCounts:
    p = _as_binary(pred, "pred")
    t = _as_binary(truth, "truth")
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: pred {p.shape} vs truth {t.shape}")
    tp = int(np.count_nonzero(p & t))
    tn = int(np.count_nonzero(~p & ~t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    return ConfusionCounts(tp, tn, fp, fn)


def mcc(pred, truth) -> float:
    """Matthews correlation (phi coefficient); 0 when any marginal is empty."""
    c = confusion(pred, truth)
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    # integer products stay exact; only the final division is rounded
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def score_level(preds: Sequence, truths: Sequence) -> float:
    """Sum of per-phantom MCC over one level (three phantoms, max 3.0)."""
    if len(preds) != 3 or len(truths) != 3:
        raise ValueError(f"a level has exactly 3 phantoms, got {len(preds)} predictions and {len(truths)} truths")
    return total_mcc(preds, truths)


def total_mcc(preds: Sequence, truths: Sequence) -> float:
    """Sum of per-image MCC for any number of pairs (e.g. the four demo images, max 4.0)."""
    if len(preds) != len(truths):
        raise ValueError(f"count mismatch: {len(preds)} predictions vs {len(truths)} truths")
    return float(sum(mcc(p, t) for p, t in zip(preds, truths)))
