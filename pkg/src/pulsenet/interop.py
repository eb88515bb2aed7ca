"""Export and import networks as NIR-style interchange graphs.

The graph describes neurons in continuous time. A discrete LIF/LI cell
with decay ``beta`` maps to time constant ``tau = dt / (1 - beta)`` under
forward-Euler discretization (``beta = 1 - dt / tau``). Under that map the
continuous input current equals the discrete input divided by
``1 - beta``. Export therefore divides the weights feeding each cell by
``1 - beta``, and import multiplies them back by ``dt / tau``. Any
max-pool or flatten layers between the weights and the cell are
transparent to the per-channel positive scale.

Dense weights are stored ``(out, in)`` in the graph (the convention of
the interchange format). The network itself uses ``(in, out)``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import network as net
from .tensor import DTYPES
from .errors import (DiscretizationError, ExportError, FormatError,
                     UnsupportedNodeError, UnsupportedTopologyError)
from .surrogate import SpikingActivation, superspike

FORMAT_VERSION = 1
DISCRETIZATION = "forward-euler"


@dataclass
class InputNode:
    shape: tuple


@dataclass
class OutputNode:
    shape: tuple


@dataclass
class AffineNode:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray


@dataclass
class LinearNode:
    weight: np.ndarray  # (out, in)


@dataclass
class Conv2dNode:
    weight: np.ndarray  # (F, C, Kh, Kw)
    stride: tuple = (1, 1)
    padding: object = "valid"
    bias: np.ndarray | None = None


@dataclass
class MaxPool2dNode:
    window: tuple = (2, 2)
    ceil: bool = True


@dataclass
class FlattenNode:
    pass


@dataclass
class LIFNode:
    tau: np.ndarray
    r: np.ndarray
    v_leak: np.ndarray
    v_threshold: np.ndarray


@dataclass
class LINode:
    tau: np.ndarray
    r: np.ndarray
    v_leak: np.ndarray


NODE_KINDS = {
    "Input": InputNode, "Output": OutputNode, "Affine": AffineNode, "Linear": LinearNode,
    "Conv2d": Conv2dNode, "MaxPool2d": MaxPool2dNode, "Flatten": FlattenNode,
    "LIF": LIFNode, "LI": LINode,
}
_KIND_OF = {v: k for k, v in NODE_KINDS.items()}
_WEIGHTED = (AffineNode, LinearNode, Conv2dNode)
_TRANSPARENT = (MaxPool2dNode, FlattenNode)


@dataclass
class GraphDoc:
    nodes: dict
    edges: list
    metadata: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# Export
# --------------------------------------------------------------------------

def _beta_value(r: net.ResolvedLayer, params):
    layer = r.layer
    if layer.beta_mode == "fixed":
        beta = np.float64(layer.beta)
    else:
        beta = np.asarray(params[r.name]["beta"], dtype=np.float64)
    return np.clip(beta, 0.0, 1.0)


def _channel_scale(scale, channels, name, error=ExportError):
    """Reduce a cell-shaped scale to one factor per output channel of the weight layer.

    Cells after pooling/flattening keep channel-major order, so each
    channel owns a contiguous run of cell entries. Returns ``None`` when the
    scale varies within a channel.
    """
    scale = np.asarray(scale, dtype=np.float64)
    if scale.ndim == 0:
        return scale
    if scale.size % channels:
        raise error(f"{name}: cell of {scale.size} neurons does not split into "
                    f"{channels} channels")
    per = scale.reshape(channels, -1)
    if not np.allclose(per, per[:, :1], rtol=1e-12, atol=0):
        return None
    return per.mean(axis=1)


def export_graph(spec: net.NetworkSpec, params, dt: float = 1.0) -> GraphDoc:
    """Convert a sequential network into an interchange graph."""
    if not dt > 0:
        raise ExportError("dt must be positive")
    layers = [r for r in net.resolve(spec) if not isinstance(r.layer, net.ActivityMonitor)]
    nodes = {"input": InputNode(tuple(spec.input_shape))}
    order = ["input"]

    # decay factor of the next cell reachable through transparent layers
    scales = {}
    for i, r in enumerate(layers):
        if isinstance(r.layer, (net.Linear, net.Conv2d)):
            j = i + 1
            while j < len(layers) and isinstance(layers[j].layer, (net.MaxPool, net.Flatten)):
                j += 1
            if j < len(layers) and isinstance(layers[j].layer, net.STATEFUL):
                scales[r.name] = layers[j]
    absorbed = {cell.name for cell in scales.values()}
    resistance = {}  # cells whose input gain stays on the node instead of the weights

    for r in layers:
        layer = r.layer
        if isinstance(layer, net.STATEFUL):
            beta = _beta_value(r, params)
            if np.any(beta >= 1):
                raise ExportError(f"{r.name}: beta = 1 has no finite time constant")
            if r.name not in absorbed and np.any(beta != 0):
                raise ExportError(f"{r.name}: no weight layer precedes the cell to absorb rescaling")
            tau = dt / (1.0 - beta)
            ones = np.ones_like(tau)
            res = resistance.get(r.name, ones)
            if isinstance(layer, net.LIF):
                nodes[r.name] = LIFNode(tau, res, np.zeros_like(tau), layer.threshold * ones)
            else:
                nodes[r.name] = LINode(tau, res, np.zeros_like(tau))
        elif isinstance(layer, (net.Linear, net.Conv2d)):
            w = np.asarray(params[r.name]["w"])
            b = np.asarray(params[r.name]["b"]) if layer.bias else None
            scale = np.float64(1.0)
            if r.name in scales:
                beta = _beta_value(scales[r.name], params)
                if np.any(beta >= 1):
                    raise ExportError(f"{scales[r.name].name}: beta = 1 has no finite time constant")
                channels = layer.out if isinstance(layer, net.Linear) else layer.filters
                gain = 1.0 / (1.0 - beta)
                scale = _channel_scale(gain, channels, r.name)
                if scale is None:
                    # per-neuron decay inside a conv channel: R carries the gain
                    resistance[scales[r.name].name] = gain
                    scale = np.float64(1.0)
            if isinstance(layer, net.Linear):
                wn = (w.astype(np.float64) * scale).T.astype(w.dtype)
                if b is None:
                    nodes[r.name] = LinearNode(wn)
                else:
                    nodes[r.name] = AffineNode(wn, (b.astype(np.float64) * scale).astype(b.dtype))
            else:
                s = scale.reshape(-1, 1, 1, 1) if np.ndim(scale) else scale
                wn = (w.astype(np.float64) * s).astype(w.dtype)
                bn = None if b is None else (b.astype(np.float64) * scale).astype(b.dtype)
                stride = tuple(np.broadcast_to(layer.stride, 2).tolist())
                pad = layer.padding if isinstance(layer.padding, str) else \
                    tuple(np.broadcast_to(layer.padding, 2).tolist())
                nodes[r.name] = Conv2dNode(wn, stride, pad, bn)
        elif isinstance(layer, net.MaxPool):
            nodes[r.name] = MaxPool2dNode(tuple(np.broadcast_to(layer.window, 2).tolist()), layer.ceil)
        elif isinstance(layer, net.Flatten):
            nodes[r.name] = FlattenNode()
        order.append(r.name)
    nodes["output"] = OutputNode(tuple(layers[-1].out_shape))
    order.append("output")
    edges = list(zip(order[:-1], order[1:]))
    meta = {"dt": float(dt), "version": FORMAT_VERSION, "discretization": DISCRETIZATION,
            "weight_layout": "out_in"}
    return GraphDoc(nodes, edges, meta)


# --------------------------------------------------------------------------
# Import
# --------------------------------------------------------------------------

def chain_order(doc: GraphDoc) -> list[str]:
    """Node names from Input to Output by following the edges.

    Depends only on the edge list, not on edge or node-map ordering.
    """
    succ, pred = {}, {}
    for a, b in doc.edges:
        for n in (a, b):
            if n not in doc.nodes:
                raise UnsupportedTopologyError(f"edge refers to unknown node {n!r}")
        if a in succ or b in pred:
            raise UnsupportedTopologyError(f"branching at {a!r} -> {b!r}; only chains are supported")
        succ[a] = b
        pred[b] = a
    inputs = sorted(n for n, d in doc.nodes.items() if isinstance(d, InputNode))
    if len(inputs) != 1:
        raise UnsupportedTopologyError(f"expected exactly one input node, found {inputs}")
    order = [inputs[0]]
    seen = {inputs[0]}
    while order[-1] in succ:
        nxt = succ[order[-1]]
        if nxt in seen:
            raise UnsupportedTopologyError(f"cycle through {nxt!r}")
        seen.add(nxt)
        order.append(nxt)
    if not isinstance(doc.nodes[order[-1]], OutputNode):
        raise UnsupportedTopologyError(f"chain ends at {order[-1]!r}, not an output node")
    if len(seen) != len(doc.nodes):
        raise UnsupportedTopologyError(
            f"nodes not on the input-output chain: {sorted(set(doc.nodes) - seen)}")
    return order


def _cell_beta(name, node, dt):
    tau = np.asarray(node.tau, dtype=np.float64)
    if np.any(tau <= 0):
        raise DiscretizationError(f"{name}: tau must be positive")
    if np.any(dt > tau):
        raise DiscretizationError(f"{name}: dt={dt} exceeds tau={tau.min()}; forward Euler is unstable")
    if np.any(np.asarray(node.v_leak) != 0):
        raise UnsupportedNodeError(f"{name}: non-zero v_leak is not supported", node=name)
    return np.clip(1.0 - dt / tau, 0.0, 1.0), (dt / tau) * np.asarray(node.r, dtype=np.float64)


def _import_scale(gain, channels, name):
    g = _channel_scale(gain, channels, name, UnsupportedNodeError)
    if g is None:
        raise UnsupportedNodeError(f"{name}: input gain dt/tau*R varies within a channel",
                                   node=name)
    return g


def import_graph(doc: GraphDoc, dt: float | None = None,
                 activation: SpikingActivation | None = None, dtype="f32"):
    """Rebuild ``(spec, params)`` from a chain graph.

    ``activation`` is the surrogate for every imported LIF cell (the graph
    describes forward dynamics only).
    """
    dt = float(doc.metadata.get("dt", 1.0) if dt is None else dt)
    if not dt > 0:
        raise DiscretizationError("dt must be positive")
    act = activation or superspike()
    order = chain_order(doc)
    for name in order:
        if type(doc.nodes[name]) not in _KIND_OF:
            raise UnsupportedNodeError(f"unsupported node {name!r} of type "
                                       f"{type(doc.nodes[name]).__name__}", node=name)
    chain = order[1:-1]
    input_shape = tuple(doc.nodes[order[0]].shape)

    # input-current scale dt/tau*R of the cell each weight node feeds
    scales = {}
    for i, name in enumerate(chain):
        if isinstance(doc.nodes[name], _WEIGHTED):
            j = i + 1
            while j < len(chain) and isinstance(doc.nodes[chain[j]], _TRANSPARENT):
                j += 1
            if j < len(chain) and isinstance(doc.nodes[chain[j]], (LIFNode, LINode)):
                scales[name] = chain[j]
    absorbed = set(scales.values())

    layers, raw = [], []
    for name in chain:
        node = doc.nodes[name]
        if isinstance(node, (LIFNode, LINode)):
            beta, gain = _cell_beta(name, node, dt)
            if name not in absorbed and np.any(gain != 1):
                raise UnsupportedTopologyError(f"{name}: no weight node precedes the cell")
            mode = "learnable-scalar" if beta.ndim == 0 else "per-neuron"
            if isinstance(node, LIFNode):
                thr = np.unique(np.asarray(node.v_threshold, dtype=np.float64))
                if len(thr) != 1:
                    raise UnsupportedNodeError(f"{name}: per-neuron thresholds are not supported",
                                               node=name)
                layers.append(net.LIF(activation=act, beta_mode=mode, threshold=float(thr[0])))
            else:
                layers.append(net.LI(beta_mode=mode))
            raw.append({"beta": beta})
            continue
        gain = np.float64(1.0)
        if name in scales:
            cell = doc.nodes[scales[name]]
            _, gain = _cell_beta(scales[name], cell, dt)
        if isinstance(node, (AffineNode, LinearNode)):
            w = np.asarray(node.weight)
            g = _import_scale(gain, w.shape[0], name)
            p = {"w": (w.astype(np.float64).T * g)}
            if isinstance(node, AffineNode):
                p["b"] = np.asarray(node.bias, dtype=np.float64) * g
            layers.append(net.Linear(w.shape[0], bias=isinstance(node, AffineNode)))
            raw.append(p)
        elif isinstance(node, Conv2dNode):
            w = np.asarray(node.weight)
            g = _import_scale(gain, w.shape[0], name)
            p = {"w": w.astype(np.float64) * (g.reshape(-1, 1, 1, 1) if np.ndim(g) else g)}
            if node.bias is not None:
                p["b"] = np.asarray(node.bias, dtype=np.float64) * g
            pad = node.padding if isinstance(node.padding, str) else tuple(node.padding)
            layers.append(net.Conv2d(w.shape[0], tuple(w.shape[2:]), tuple(node.stride), pad,
                                     bias=node.bias is not None))
            raw.append(p)
        elif isinstance(node, MaxPool2dNode):
            layers.append(net.MaxPool(tuple(node.window), bool(node.ceil)))
            raw.append({})
        elif isinstance(node, FlattenNode):
            layers.append(net.Flatten())
            raw.append({})
        else:
            raise UnsupportedNodeError(f"node {name!r} ({type(node).__name__}) cannot appear "
                                       f"inside the chain", node=name)
    spec = net.NetworkSpec(input_shape, tuple(layers))
    resolved = net.resolve(spec)
    out_shape = tuple(doc.nodes[order[-1]].shape)
    if resolved[-1].out_shape != out_shape:
        raise UnsupportedTopologyError(f"output node shape {out_shape} does not match "
                                       f"network output {resolved[-1].out_shape}")
    params = {}
    for r, p in zip(resolved, raw):
        if p:
            params[r.name] = {k: np.asarray(v, dtype=np.float64).astype(DTYPES[dtype])
                              for k, v in p.items()}
    return spec, params


# --------------------------------------------------------------------------
# File format
# --------------------------------------------------------------------------
# magic b"PNGR" | u32 version | u64 manifest length | manifest (UTF-8 JSON) | payload
# The manifest lists nodes in order with scalar attributes inline and every
# array as {dtype, shape, offset, nbytes} into the payload.

MAGIC = b"PNGR"
_PRE = struct.Struct("<4sIQ")

_ARRAY_FIELDS = {"weight", "bias", "tau", "r", "v_leak", "v_threshold"}


def write_graph(path, doc: GraphDoc) -> None:
    payload = bytearray()
    nodes = []
    for name, node in doc.nodes.items():
        kind = _KIND_OF.get(type(node))
        if kind is None:
            raise UnsupportedNodeError(f"cannot serialize node {name!r}", node=name)
        attrs, arrays = {}, {}
        for key, val in vars(node).items():
            if key in _ARRAY_FIELDS:
                if val is None:
                    attrs[key] = None
                    continue
                arr = np.array(val, order="C")
                arr = arr.astype(arr.dtype.newbyteorder("<"))
                arrays[key] = {"dtype": arr.dtype.str, "shape": list(arr.shape),
                               "offset": len(payload), "nbytes": arr.nbytes}
                payload += arr.tobytes()
            else:
                attrs[key] = list(val) if isinstance(val, tuple) else val
        nodes.append({"name": name, "kind": kind, "attrs": attrs, "arrays": arrays})
    manifest = {"version": FORMAT_VERSION, "metadata": doc.metadata, "nodes": nodes,
                "edges": [list(e) for e in doc.edges], "payload_bytes": len(payload)}
    blob = json.dumps(manifest, sort_keys=True).encode()
    Path(path).write_bytes(_PRE.pack(MAGIC, FORMAT_VERSION, len(blob)) + blob + bytes(payload))


def read_graph(path) -> GraphDoc:
    buf = Path(path).read_bytes()
    if len(buf) < _PRE.size:
        raise FormatError("truncated graph header", len(buf))
    magic, version, mlen = _PRE.unpack_from(buf)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported graph version {version}", 4)
    start = _PRE.size
    if start + mlen > len(buf):
        raise FormatError("truncated manifest", len(buf))
    try:
        manifest = json.loads(buf[start:start + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"corrupt manifest: {e}", start) from None
    if manifest.get("version") != FORMAT_VERSION:
        raise FormatError(f"manifest version {manifest.get('version')} mismatch", start)
    base = start + mlen
    payload = buf[base:]
    if len(payload) != manifest.get("payload_bytes"):
        raise FormatError(f"payload holds {len(payload)} bytes, manifest declares "
                          f"{manifest.get('payload_bytes')}", base + min(len(payload), manifest.get("payload_bytes") or 0))
    nodes = {}
    for entry in manifest["nodes"]:
        kind = entry["kind"]
        if kind not in NODE_KINDS:
            raise UnsupportedNodeError(f"node {entry['name']!r} has unsupported kind {kind!r}",
                                       node=entry["name"])
        fields = dict(entry["attrs"])
        for key, spec in entry["arrays"].items():
            lo, n = spec["offset"], spec["nbytes"]
            dt = np.dtype(spec["dtype"])
            shape = tuple(spec["shape"])
            if lo < 0 or lo + n > len(payload):
                raise FormatError(f"array {entry['name']}.{key} runs past the payload", base + lo)
            if n != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
                raise FormatError(f"array {entry['name']}.{key}: shape {shape} does not match "
                                  f"{n} bytes", base + lo)
            fields[key] = np.frombuffer(payload[lo:lo + n], dtype=dt).reshape(shape).copy()
        for key in ("shape", "stride", "window"):
            if isinstance(fields.get(key), list):
                fields[key] = tuple(fields[key])
        if isinstance(fields.get("padding"), list):
            fields["padding"] = tuple(fields["padding"])
        nodes[entry["name"]] = NODE_KINDS[kind](**fields)
    edges = [tuple(e) for e in manifest["edges"]]
    return GraphDoc(nodes, edges, manifest["metadata"])
