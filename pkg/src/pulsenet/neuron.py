"""Leaky integrate-and-fire (LIF) and leaky integrator (LI) cells.

Discrete dynamics, per step ``t``::

    S_t     = phi(V_t - theta)
    V_{t+1} = clip(beta, 0, 1) * V_t + x_t - S_t * theta

The spike is decided from the membrane *before* the update, and a spike
resets by subtracting the threshold. The LI readout uses the same leak
without threshold or reset and emits ``V_{t+1}``.

``lif_step``/``li_step`` advance a single step using ordinary tape ops.
``lif_scan``/``li_scan`` advance a whole ``[B, T, ...]`` block as one tape
node with a hand-written backpropagation-through-time backward. The block
form is what the network uses.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .autodiff import Var, value_of
from .errors import ArgumentError, ContractError
from .surrogate import SpikingActivation, superspike

BETA_MODES = ("per-neuron", "learnable-scalar", "fixed")


@dataclass(frozen=True)
class LIFParams:
    beta: object  # ndarray, Var or float
    threshold: float = 1.0
    activation: SpikingActivation = field(default_factory=superspike)

    def __post_init__(self):
        if not self.threshold > 0:
            raise ArgumentError("threshold must be positive")


def effective_beta(beta):
    return ad.clip(beta, 0.0, 1.0)


def lif_step(p: LIFParams, x, V):
    """One LIF step; returns ``(spikes, V_next)``."""
    if np.shape(value_of(x)) != np.shape(value_of(V)):
        raise ArgumentError(f"input shape {np.shape(value_of(x))} != state shape "
                            f"{np.shape(value_of(V))}")
    b = effective_beta(p.beta)
    s = p.activation(V - p.threshold)
    V = b * V + x - s * p.threshold
    return s, V


def li_step(p: LIFParams, x, V):
    """One leaky-integrator step; returns ``(V_next, V_next)``."""
    if np.shape(value_of(x)) != np.shape(value_of(V)):
        raise ArgumentError("input and state shapes differ")
    V = effective_beta(p.beta) * V + x
    return V, V


def init_state(batch: int, hidden_shape, dtype=np.float32) -> np.ndarray:
    if batch < 1:
        raise ArgumentError("batch must be >= 1")
    return np.zeros((batch,) + tuple(hidden_shape), dtype=dtype)


def init_lif(rng: T.RngKey, hidden_shape, beta_mode: str = "per-neuron",
             dtype="f32") -> dict:
    """Trainable parameters of one LIF/LI layer.

    Decay rates are drawn from a normal with mean 0.5 and std 0.25,
    truncated to [0, 1]. ``fixed`` mode has no trainable parameters (the
    constant lives in the layer spec).
    """
    if beta_mode == "per-neuron":
        return {"beta": T.truncated_normal(rng, tuple(hidden_shape), 0.5, 0.25, 0.0, 1.0, dtype)}
    if beta_mode == "learnable-scalar":
        return {"beta": T.truncated_normal(rng, (), 0.5, 0.25, 0.0, 1.0, dtype)}
    if beta_mode == "fixed":
        return {}
    raise ArgumentError(f"unknown beta mode {beta_mode!r}; expected one of {BETA_MODES}")


def _scan_inputs(x, beta, V0):
    xv = np.asarray(value_of(x))
    if xv.ndim < 2:
        raise ArgumentError("scan input must be [B, T, ...]")
    if V0 is None:
        V0 = np.zeros((xv.shape[0],) + xv.shape[2:], dtype=xv.dtype)
    v0 = np.asarray(value_of(V0))
    if v0.shape != (xv.shape[0],) + xv.shape[2:]:
        raise ArgumentError(f"state shape {v0.shape} does not match input {xv.shape}")
    bv = np.asarray(value_of(beta), dtype=xv.dtype)
    return xv, bv, v0, V0


def lif_scan(p: LIFParams, x, V0=None):
    """Run LIF over the time axis (axis 1) of ``x``.

    Returns ``(spikes [B,T,...], V_T)``. Differentiable with respect to
    ``x``, ``p.beta`` and ``V0``.
    """
    xv, bv, v0, V0 = _scan_inputs(x, p.beta, V0)
    theta = p.threshold
    act = p.activation
    b = np.clip(bv, 0.0, 1.0)
    steps = xv.shape[1]
    spikes = np.empty_like(xv)
    pre = np.empty_like(xv)
    mem = np.empty_like(xv)
    V = v0
    for t in range(steps):
        mem[:, t] = V
        u = V - theta
        pre[:, t] = u
        s = act.fwd(u)
        spikes[:, t] = s
        V = b * V + xv[:, t] - s * theta

    args = (x, p.beta, V0)
    tape = ad._tape_of(args)
    if tape is None:
        return spikes, V

    def vjp(cot):
        g_spk, g_last = cot
        lam = np.zeros_like(v0) if g_last is None else g_last
        surr = np.asarray(act.bwd(pre), dtype=xv.dtype)
        gx = np.empty_like(xv)
        gb = np.zeros_like(v0)
        for t in range(steps - 1, -1, -1):
            gx[:, t] = lam
            gb += lam * mem[:, t]
            ds = -theta * lam if g_spk is None else g_spk[:, t] - theta * lam
            lam = b * lam + ds * surr[:, t]
        gbeta = ad.unbroadcast(gb, bv.shape) * ((bv > 0) & (bv < 1))
        return gx, gbeta.reshape(bv.shape), lam

    return tape.record_multi("lif_scan", args, (spikes, V), vjp)


def li_scan(p: LIFParams, x, V0=None):
    """Run the leaky integrator over axis 1; returns ``(trace, V_T)``."""
    xv, bv, v0, V0 = _scan_inputs(x, p.beta, V0)
    b = np.clip(bv, 0.0, 1.0)
    steps = xv.shape[1]
    trace = np.empty_like(xv)
    V = v0
    for t in range(steps):
        V = b * V + xv[:, t]
        trace[:, t] = V

    args = (x, p.beta, V0)
    tape = ad._tape_of(args)
    if tape is None:
        return trace, V

    def vjp(cot):
        g_out, g_last = cot
        lam = np.zeros_like(v0) if g_last is None else g_last.copy()
        gx = np.empty_like(xv)
        gb = np.zeros_like(v0)
        for t in range(steps - 1, -1, -1):
            if g_out is not None:
                lam = lam + g_out[:, t]
            gx[:, t] = lam
            gb += lam * (trace[:, t - 1] if t > 0 else v0)
            lam = b * lam
        gbeta = ad.unbroadcast(gb, bv.shape) * ((bv > 0) & (bv < 1))
        return gx, gbeta.reshape(bv.shape), lam

    return tape.record_multi("li_scan", args, (trace, V), vjp)


def monitor_activity(spikes):
    """Pass spikes through unchanged and return per-example spike counts.

    ``spikes`` is ``[B, T, ...]``; counts are summed over time.
    """
    sv = np.asarray(value_of(spikes))
    if not np.isin(sv, (0, 1)).all():
        raise ContractError("activity monitor expects a binary spike trace")
    return spikes, ad.sum_(spikes, axis=1)
