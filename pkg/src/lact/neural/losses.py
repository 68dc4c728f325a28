"""Binary cross-entropy on probabilities and on logits."""
from __future__ import annotations

import numpy as np

from ..tensor import Tensor, _sigmoid, as_tensor, record

_LOG_FLOOR = -100.0


def binary_cross_entropy(pred, target) -> Tensor:
    """Mean of ``-[t ln p + (1 - t) ln(1 - p)]``; logs are floored at -100."""
    pred = as_tensor(pred)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ValueError(f"bce: pred shape {pred.shape} vs target shape {t.shape}")
    p = pred.data
    with np.errstate(divide="ignore"):
        log_p = np.maximum(np.log(p), _LOG_FLOOR)
        log_q = np.maximum(np.log1p(-p), _LOG_FLOOR)
    loss = -np.mean(t * log_p + (1.0 - t) * log_q)
    count = p.size

    def backward(g):
        denom = np.maximum(p * (1.0 - p), 1e-12)
        return (g * (p - t) / denom / count,)

    return record(np.asarray(loss), (pred,), backward, "bce")


def bce_with_logits(logits, target) -> Tensor:
    """Same loss as :func:`binary_cross_entropy` applied to ``sigmoid(logits)``, computed stably."""
    logits = as_tensor(logits)
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != logits.shape:
        raise ValueError(f"bce: logits shape {logits.shape} vs target shape {t.shape}")
    z = logits.data
    # log(1 + exp(-|z|)) + max(z, 0) - t z
    loss = np.mean(np.logaddexp(0.0, -np.abs(z)) + np.maximum(z, 0.0) - t * z)
    count = z.size
    return record(np.asarray(loss), (logits,), lambda g: (g * (_sigmoid(z) - t) / count,), "bce_logits")
