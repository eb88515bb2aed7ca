"""Plain-text run configuration.

A config is ``key = value`` lines followed by a ``[layers]`` section with
one layer per line::

    input_shape = 32
    epochs = 300
    lr = 0.001

    [layers]
    linear out=64
    lif activation=superspike k=25.0 beta_mode=per-neuron
    linear out=3
    li

``format_config(parse_config(text))`` is canonical, and
``parse_config(format_config(cfg)) == cfg``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from . import network as net
from .errors import ArgumentError, SpecError
from .optimize import TrainConfig
from .surrogate import SpikingActivation, by_name


@dataclass(frozen=True)
class RunConfig:
    spec: net.NetworkSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    data: str = ""
    dt: float = 1.0
    warmup: int = 1
    trials: int = 5
    batch_sizes: tuple = (64, 128, 256)
    unrolls: tuple = (32,)


_TRAIN_FIELDS = {f.name: f for f in fields(TrainConfig)}
_RUN_SCALARS = {"data": str, "dt": float, "warmup": int, "trials": int}
_RUN_TUPLES = {"batch_sizes", "unrolls"}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_bool(s, line):
    if s in ("true", "false"):
        return s == "true"
    raise SpecError(f"expected true/false, got {s!r}", line)


def _parse_ints(s, line) -> tuple:
    try:
        return tuple(int(x) for x in s.split(",") if x.strip())
    except ValueError:
        raise SpecError(f"expected comma-separated integers, got {s!r}", line) from None


def _convert(kind, s, line):
    try:
        if kind is bool:
            return _parse_bool(s, line)
        if kind is tuple:
            return _parse_ints(s, line)
        return kind(s)
    except ValueError:
        raise SpecError(f"cannot parse {s!r} as {kind.__name__}", line) from None


def _int_or_pair(s, line):
    v = _parse_ints(s, line)
    if len(v) == 1:
        return v[0]
    if len(v) == 2:
        return v
    raise SpecError(f"expected one or two integers, got {s!r}", line)


_ACT_KEYS = ("k", "width", "height")


def _parse_layer(text, line) -> net.Layer:
    parts = text.split()
    kind, kv = parts[0], {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise SpecError(f"expected key=value, got {tok!r}", line)
        k, v = tok.split("=", 1)
        if k in kv:
            raise SpecError(f"duplicate key {k!r}", line)
        kv[k] = v

    def take(key, conv, default=None):
        if key in kv:
            return conv(kv.pop(key))
        return default

    try:
        if kind == "linear":
            if "out" not in kv:
                raise SpecError("linear needs out=", line)
            layer = net.Linear(take("out", int), take("bias", lambda s: _parse_bool(s, line), False))
        elif kind == "conv":
            if "filters" not in kv:
                raise SpecError("conv needs filters=", line)
            pad = take("padding", str, "valid")
            if pad not in ("valid", "same"):
                pad = _int_or_pair(pad, line)
            layer = net.Conv2d(take("filters", int),
                               take("kernel", lambda s: _int_or_pair(s, line), 3),
                               take("stride", lambda s: _int_or_pair(s, line), 1),
                               pad, take("bias", lambda s: _parse_bool(s, line), False))
        elif kind == "maxpool":
            layer = net.MaxPool(take("window", lambda s: _int_or_pair(s, line), 2),
                                take("ceil", lambda s: _parse_bool(s, line), True))
        elif kind == "flatten":
            layer = net.Flatten()
        elif kind == "monitor":
            layer = net.ActivityMonitor()
        elif kind == "lif":
            name = take("activation", str, "superspike")
            hyper = {k: float(kv.pop(k)) for k in _ACT_KEYS if k in kv}
            layer = net.LIF(activation=by_name(name, **hyper),
                            beta_mode=take("beta_mode", str, "per-neuron"),
                            beta=take("beta", float), threshold=take("threshold", float, 1.0))
        elif kind == "li":
            layer = net.LI(beta_mode=take("beta_mode", str, "per-neuron"), beta=take("beta", float))
        else:
            raise SpecError(f"unknown layer kind {kind!r}", line)
    except (ValueError, ArgumentError) as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(str(e), line) from None
    if kv:
        raise SpecError(f"unknown keys for {kind}: {sorted(kv)}", line)
    return layer


def _format_act(act: SpikingActivation) -> str:
    if act.name == "custom":
        raise SpecError("custom activations cannot be written to a config file")
    extra = "".join(f" {k}={_fmt(float(v))}" for k, v in act.hyper)
    return f"activation={act.name}{extra}"


def _format_layer(layer) -> str:
    if isinstance(layer, net.Linear):
        return f"linear out={layer.out} bias={_fmt(layer.bias)}"
    if isinstance(layer, net.Conv2d):
        pad = layer.padding if isinstance(layer.padding, str) else _fmt(layer.padding)
        return (f"conv filters={layer.filters} kernel={_fmt(layer.kernel)} "
                f"stride={_fmt(layer.stride)} padding={pad} bias={_fmt(layer.bias)}")
    if isinstance(layer, net.MaxPool):
        return f"maxpool window={_fmt(layer.window)} ceil={_fmt(layer.ceil)}"
    if isinstance(layer, net.Flatten):
        return "flatten"
    if isinstance(layer, net.ActivityMonitor):
        return "monitor"
    if isinstance(layer, net.LIF):
        out = f"lif {_format_act(layer.activation)} beta_mode={layer.beta_mode}"
        if layer.beta is not None:
            out += f" beta={_fmt(float(layer.beta))}"
        return out + f" threshold={_fmt(float(layer.threshold))}"
    if isinstance(layer, net.LI):
        out = f"li beta_mode={layer.beta_mode}"
        if layer.beta is not None:
            out += f" beta={_fmt(float(layer.beta))}"
        return out
    raise SpecError(f"cannot format layer {layer!r}")


def parse_config(text: str) -> RunConfig:
    train_kw, run_kw = {}, {}
    input_shape = None
    layers = []
    in_layers = False
    seen = set()
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[layers]":
            if in_layers:
                raise SpecError("duplicate [layers] section", no)
            in_layers = True
            continue
        if line.startswith("["):
            raise SpecError(f"unknown section {line}", no)
        if in_layers:
            layers.append(_parse_layer(line, no))
            continue
        if "=" not in line:
            raise SpecError(f"expected key = value, got {line!r}", no)
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise SpecError(f"duplicate key {key!r}", no)
        seen.add(key)
        if key == "input_shape":
            input_shape = _parse_ints(value, no)
        elif key in _TRAIN_FIELDS:
            kind = _TRAIN_FIELDS[key].type
            kind = {"int": int, "float": float, "str": str, "tuple": tuple}.get(kind, kind)
            train_kw[key] = _convert(kind, value, no)
        elif key in _RUN_SCALARS:
            run_kw[key] = _convert(_RUN_SCALARS[key], value, no)
        elif key in _RUN_TUPLES:
            run_kw[key] = _parse_ints(value, no)
        else:
            raise SpecError(f"unknown key {key!r}", no)
    if input_shape is None:
        raise SpecError("missing input_shape")
    if not layers:
        raise SpecError("missing [layers] section")
    try:
        train = TrainConfig(**train_kw)
    except ArgumentError as e:
        raise SpecError(str(e)) from None
    spec = net.NetworkSpec(input_shape, tuple(layers))
    net.resolve(spec)
    return RunConfig(spec, train, **run_kw)


def format_config(cfg: RunConfig) -> str:
    lines = [f"input_shape = {_fmt(cfg.spec.input_shape)}"]
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {_fmt(getattr(cfg.train, f.name))}")
    for key in ("data", "dt", "warmup", "trials", "batch_sizes", "unrolls"):
        lines.append(f"{key} = {_fmt(getattr(cfg, key))}")
    lines += ["", "[layers]"]
    lines += [_format_layer(l) for l in cfg.spec.layers]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def with_overrides(cfg: RunConfig, **train_overrides) -> RunConfig:
    changes = {k: v for k, v in train_overrides.items() if v is not None}
    if not changes:
        return cfg
    return replace(cfg, train=replace(cfg.train, **changes))
