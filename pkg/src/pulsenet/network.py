"""Declarative layer pipelines, initialization and time-unrolled application.

A :class:`NetworkSpec` is an input shape plus an ordered tuple of layer
records. Inputs are batch-major ``[B, T, *input_shape]``. Stateless layers
(linear, conv, pooling, flatten) are applied to whole blocks of timesteps
at once by folding time into the batch axis. Stateful cells are advanced
through each block with a fused scan.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Union

import numpy as np

from . import autodiff as ad
from . import tensor as T
from .errors import ArgumentError, SpecError
from .neuron import BETA_MODES, LIFParams, init_lif, li_scan, lif_scan, monitor_activity
from .surrogate import SpikingActivation, arctan, superspike


@dataclass(frozen=True)
class Linear:
    out: int
    bias: bool = False


@dataclass(frozen=True)
class Conv2d:
    filters: int
    kernel: Union[int, tuple] = 3
    stride: Union[int, tuple] = 1
    padding: Union[str, int, tuple] = "valid"
    bias: bool = False


@dataclass(frozen=True)
class MaxPool:
    window: Union[int, tuple] = 2
    ceil: bool = True


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class LIF:
    shape: tuple | None = None
    activation: SpikingActivation = field(default_factory=superspike)
    beta_mode: str = "per-neuron"
    beta: float | None = None  # only for beta_mode="fixed"
    threshold: float = 1.0


@dataclass(frozen=True)
class LI:
    shape: tuple | None = None
    beta_mode: str = "per-neuron"
    beta: float | None = None


@dataclass(frozen=True)
class ActivityMonitor:
    pass


Layer = Union[Linear, Conv2d, MaxPool, Flatten, LIF, LI, ActivityMonitor]

_KIND = {Linear: "linear", Conv2d: "conv", MaxPool: "pool", Flatten: "flatten",
         LIF: "lif", LI: "li", ActivityMonitor: "monitor"}
STATEFUL = (LIF, LI)


@dataclass(frozen=True)
class ResolvedLayer:
    name: str
    layer: Layer
    in_shape: tuple
    out_shape: tuple


@dataclass(frozen=True)
class NetworkSpec:
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(n) for n in np.atleast_1d(self.input_shape)))
        object.__setattr__(self, "layers", tuple(self.layers))

    def resolve(self) -> list[ResolvedLayer]:
        return resolve(self)


def _out_shape(layer, shape, index):
    if isinstance(layer, Linear):
        if len(shape) != 1:
            raise SpecError(f"layer {index}: linear expects a flat input, got {shape}")
        if layer.out < 1:
            raise SpecError(f"layer {index}: linear width must be positive")
        return (layer.out,)
    if isinstance(layer, Conv2d):
        if len(shape) != 3:
            raise SpecError(f"layer {index}: conv expects (C, H, W) input, got {shape}")
        try:
            ho, wo = T.conv2d_output_shape(shape[1:], layer.kernel, layer.stride, layer.padding)
        except Exception as e:
            raise SpecError(f"layer {index}: {e}") from None
        return (layer.filters, ho, wo)
    if isinstance(layer, MaxPool):
        if len(shape) < 2:
            raise SpecError(f"layer {index}: pooling needs spatial axes, got {shape}")
        try:
            ho, wo = T.maxpool2d_output_shape(shape[-2:], layer.window, layer.ceil)
        except Exception as e:
            raise SpecError(f"layer {index}: {e}") from None
        if ho == 0 or wo == 0:
            raise SpecError(f"layer {index}: pooling window larger than input {shape}")
        return shape[:-2] + (ho, wo)
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, (LIF, LI)):
        if layer.shape is not None and tuple(layer.shape) != tuple(shape):
            raise SpecError(f"layer {index}: cell shape {tuple(layer.shape)} != incoming {shape}")
        if layer.beta_mode not in BETA_MODES:
            raise SpecError(f"layer {index}: unknown beta mode {layer.beta_mode!r}")
        if layer.beta_mode == "fixed" and layer.beta is None:
            raise SpecError(f"layer {index}: fixed beta mode needs a beta value")
        return shape
    if isinstance(layer, ActivityMonitor):
        return shape
    raise SpecError(f"layer {index}: unknown layer type {type(layer).__name__}")


def resolve(spec: NetworkSpec) -> list[ResolvedLayer]:
    """Chain shapes through the pipeline, inserting Flatten before dense layers."""
    shape = spec.input_shape
    out = []
    prev = None
    for i, layer in enumerate(spec.layers):
        if isinstance(layer, Linear) and len(shape) > 1:
            name = f"flatten_{len(out)}"
            flat = (int(np.prod(shape)),)
            out.append(ResolvedLayer(name, Flatten(), shape, flat))
            shape = flat
        if isinstance(layer, ActivityMonitor) and not isinstance(prev, LIF):
            raise SpecError(f"layer {i}: activity monitor must follow a LIF layer")
        new = _out_shape(layer, shape, i)
        out.append(ResolvedLayer(f"{_KIND[type(layer)]}_{len(out)}", layer, shape, new))
        shape = new
        prev = layer
    readout = [r for r in out if not isinstance(r.layer, ActivityMonitor)]
    if not readout or not isinstance(readout[-1].layer, STATEFUL):
        raise SpecError("the final layer must be a LIF or LI readout")
    return out


def init(spec: NetworkSpec, rng: T.RngKey, sample_input=None, dtype="f32") -> dict:
    """Draw parameters for every layer that has any.

    Weights are truncated normals (two standard deviations) with std
    ``1/sqrt(fan_in)``; biases start at zero.
    """
    layers = resolve(spec)
    if sample_input is not None:
        shape = np.shape(sample_input)
        if len(shape) < 2 or tuple(shape[2:]) != spec.input_shape:
            raise SpecError(f"sample input {shape} is not [B, T, *{spec.input_shape}]")
    keys = T.split(rng, max(len(layers), 1))
    params = {}
    for k, r in zip(keys, layers):
        layer = r.layer
        if isinstance(layer, Linear):
            fan_in = r.in_shape[0]
            std = 1.0 / np.sqrt(fan_in)
            p = {"w": T.truncated_normal(k, (fan_in, layer.out), 0.0, std, -2 * std, 2 * std, dtype)}
            if layer.bias:
                p["b"] = np.zeros(layer.out, dtype=T.DTYPES[dtype])
            params[r.name] = p
        elif isinstance(layer, Conv2d):
            kh, kw = T._pair(layer.kernel)
            c = r.in_shape[0]
            std = 1.0 / np.sqrt(c * kh * kw)
            p = {"w": T.truncated_normal(k, (layer.filters, c, kh, kw), 0.0, std,
                                         -2 * std, 2 * std, dtype)}
            if layer.bias:
                p["b"] = np.zeros(layer.filters, dtype=T.DTYPES[dtype])
            params[r.name] = p
        elif isinstance(layer, STATEFUL):
            p = init_lif(k, r.out_shape, layer.beta_mode, dtype)
            if p:
                params[r.name] = p
    return params


def param_count(params) -> int:
    return int(sum(np.size(ad.value_of(p)) for p in ad.tree_leaves(params)))


def _param_dtype(params):
    for p in ad.tree_leaves(params):
        v = np.asarray(ad.value_of(p))
        if v.dtype.kind == "f":
            return v.dtype
    return np.dtype(np.float32)


def _cell_params(r: ResolvedLayer, params):
    layer = r.layer
    if layer.beta_mode == "fixed":
        beta = layer.beta
    else:
        beta = params[r.name]["beta"]
    if isinstance(layer, LIF):
        return LIFParams(beta, layer.threshold, layer.activation)
    return LIFParams(beta)


def _stateless(r: ResolvedLayer, params, xb):
    """Apply a stateless layer to a [B, u, ...] block by folding time into batch."""
    layer = r.layer
    b, u = np.shape(ad.value_of(xb))[:2]
    flat = ad.reshape(xb, (b * u,) + r.in_shape)
    if isinstance(layer, Linear):
        y = ad.matmul(flat, params[r.name]["w"])
        if layer.bias:
            y = y + params[r.name]["b"]
    elif isinstance(layer, Conv2d):
        y = ad.conv2d(flat, params[r.name]["w"], layer.stride, layer.padding)
        if layer.bias:
            y = y + ad.reshape(params[r.name]["b"], (-1, 1, 1))
    elif isinstance(layer, MaxPool):
        y = ad.maxpool2d(flat, layer.window, layer.ceil)
    else:
        y = flat
    return ad.reshape(y, (b, u) + r.out_shape)


def _run(spec, params, x, blocks):
    layers = resolve(spec)
    dtype = _param_dtype(params)
    if not isinstance(x, ad.Var):
        x = np.asarray(x)
        if x.dtype != dtype:
            x = x.astype(dtype)
    shape = np.shape(ad.value_of(x))
    if len(shape) < 2 or tuple(shape[2:]) != spec.input_shape:
        raise ArgumentError(f"input {shape} is not [B, T, *{spec.input_shape}]")
    state = {}
    counts = {}
    outputs = []
    readout = [r for r in layers if isinstance(r.layer, STATEFUL)][-1].name
    for t0, t1 in blocks:
        h = x if (t0, t1) == (0, shape[1]) else ad.time_slice(x, t0, t1)
        for r in layers:
            layer = r.layer
            if isinstance(layer, LIF):
                h, state[r.name] = lif_scan(_cell_params(r, params), h, state.get(r.name))
            elif isinstance(layer, LI):
                h, state[r.name] = li_scan(_cell_params(r, params), h, state.get(r.name))
            elif isinstance(layer, ActivityMonitor):
                h, c = monitor_activity(h)
                counts[r.name] = c if r.name not in counts else counts[r.name] + c
            else:
                h = _stateless(r, params, h)
            if r.name == readout:
                outputs.append(h)
    return ad.concat(outputs, axis=1), counts


def apply(spec: NetworkSpec, params, x, unroll: int = 32):
    """Run the network over ``x`` of shape ``[B, T, *input_shape]``.

    Time is processed in consecutive blocks of ``unroll`` steps: every
    layer handles one block before the next block starts. ``unroll`` only
    changes the loop blocking; outputs do not depend on it.

    Returns ``(readout_trace [B, T, *out], spike_counts)`` where
    ``spike_counts`` maps each activity monitor's name to ``[B, ...]`` totals.
    """
    steps = np.shape(ad.value_of(x))[1] if np.ndim(ad.value_of(x)) >= 2 else 0
    if steps < 1:
        raise ArgumentError("input needs at least one timestep")
    if unroll < 1:
        raise ArgumentError("unroll must be >= 1")
    blocks = [(t, min(t + unroll, steps)) for t in range(0, steps, unroll)]
    return _run(spec, params, x, blocks)


def layerwise_apply(spec: NetworkSpec, params, x):
    """Layer-major schedule: each layer processes the full sequence before the next."""
    steps = np.shape(ad.value_of(x))[1] if np.ndim(ad.value_of(x)) >= 2 else 0
    if steps < 1:
        raise ArgumentError("input needs at least one timestep")
    return _run(spec, params, x, [(0, steps)])


def reorder_layers(reference: dict, params: dict) -> dict:
    """Return ``params`` with layer keys in the order used by ``reference``."""
    missing = set(reference) ^ set(params)
    if missing:
        raise SpecError(f"parameter maps disagree on layers: {sorted(missing)}")
    return {k: {n: params[k][n] for n in reference[k]} for k in reference}


def shd_spec(inputs: int = 700, hidden: int = 64, classes: int = 20,
             activation: SpikingActivation | None = None) -> NetworkSpec:
    """Two-hidden-layer feed-forward network for spoken-digit spike data."""
    act = activation or arctan()
    return NetworkSpec((inputs,), (
        Linear(hidden), LIF(activation=act),
        Linear(hidden), LIF(activation=act),
        Linear(classes), LI(),
    ))


def nmnist_spec(scale: int = 1, activation: SpikingActivation | None = None) -> NetworkSpec:
    """12C5-MP2-32C5-MP2-800FC10 convolutional network (``scale=2`` doubles the filters).

    Pooling drops ragged edges so a 34x34 input flattens to 32*5*5 = 800.
    """
    act = activation or superspike()
    cell = dict(activation=act, beta_mode="learnable-scalar")
    return NetworkSpec((2, 34, 34), (
        Conv2d(12 * scale, 5), MaxPool(2, ceil=False), LIF(**cell),
        Conv2d(32 * scale, 5), MaxPool(2, ceil=False), LIF(**cell),
        Flatten(), Linear(10), LI(),
    ))


def with_activation(spec: NetworkSpec, activation: SpikingActivation) -> NetworkSpec:
    layers = tuple(replace(l, activation=activation) if isinstance(l, LIF) else l
                   for l in spec.layers)
    return replace(spec, layers=layers)
