"""Rate-coded losses, accuracy and activity regularization.

All batch reductions are means, so loss scale does not depend on batch size.
"""
from __future__ import annotations

from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .errors import ArgumentError


def _check_targets(trace, targets):
    targets = np.asarray(targets)
    shape = np.shape(value_of(trace))
    if len(shape) != 3:
        raise ArgumentError(f"trace must be [B, T, C], got {shape}")
    if targets.shape != (shape[0],):
        raise ArgumentError(f"targets must be [B] = [{shape[0]}], got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= shape[2]):
        raise ArgumentError(f"targets must lie in [0, {shape[2]})")
    return targets.astype(np.int64)


def integral_crossentropy(trace, targets):
    """Softmax cross-entropy of the time-summed readout ``[B, T, C]``."""
    targets = _check_targets(trace, targets)
    logits = ad.sum_(trace, axis=1)
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.take_along(logp, targets[:, None], axis=1)
    return -ad.mean(picked)


def integral_accuracy(trace, targets) -> float:
    """Fraction of examples whose time-summed argmax equals the target.

    Ties go to the lowest class index.
    """
    targets = _check_targets(trace, targets)
    pred = np.asarray(value_of(trace)).sum(axis=1).argmax(axis=-1)
    return float((pred == targets).mean())


def spike_rate_mse(spike_trace, targets, rate_hi: float = 1.0, rate_lo: float = 0.0):
    """Mean squared error between output firing rates and per-class target rates."""
    if not (0 <= rate_hi <= 1 and 0 <= rate_lo <= 1):
        raise ArgumentError("target rates must lie in [0, 1]")
    targets = _check_targets(spike_trace, targets)
    b, steps, c = np.shape(value_of(spike_trace))
    dtype = np.asarray(value_of(spike_trace)).dtype
    goal = np.full((b, c), rate_lo, dtype=dtype)
    goal[np.arange(b), targets] = rate_hi
    rate = ad.sum_(spike_trace, axis=1) / steps
    return ad.mean(ad.square(rate - goal))


def activity_regularizer(counts, T: int, f_min: float = 0.0, f_max: float = 1.0,
                         lam_low: float = 0.0, lam_high: float = 0.0):
    """Squared-hinge penalty on firing rates outside ``[f_min, f_max]``.

    ``counts`` is one ``[B, ...]`` spike-count tensor or a mapping of them
    (e.g. the monitor output of :func:`pulsenet.network.apply`); the
    penalties of a mapping are summed.
    """
    if not 0 <= f_min <= f_max <= 1:
        raise ArgumentError("need 0 <= f_min <= f_max <= 1")
    if T < 1:
        raise ArgumentError("T must be >= 1")
    if isinstance(counts, Mapping):
        total = 0.0
        for c in counts.values():
            total = total + activity_regularizer(c, T, f_min, f_max, lam_low, lam_high)
        return total
    rate = counts / T
    low = ad.mean(ad.square(ad.relu(f_min - rate)))
    high = ad.mean(ad.square(ad.relu(rate - f_max)))
    return lam_low * low + lam_high * high


LOSSES = {
    "integral_crossentropy": integral_crossentropy,
    "spike_rate_mse": spike_rate_mse,
}
