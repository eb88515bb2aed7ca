"""Optimizers, the fused train step and the epoch loop."""
from __future__ import annotations

import hashlib
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import autodiff as ad
from . import network
from . import tensor as T
from .data import PackedDataset, RasterDataset, shift_augment, shuffle, unpack_time
from .errors import ArgumentError, ContractError, FormatError, NumericError
from .objective import LOSSES, activity_regularizer, integral_accuracy


@dataclass
class OptimizerState:
    step: int
    slots: dict  # slot name -> pytree mirroring params


def _check_shapes(params, grads):
    p, g = ad.tree_leaves(params), ad.tree_leaves(grads)
    if len(p) != len(g) or any(np.shape(a) != np.shape(b) for a, b in zip(p, g)):
        raise ContractError("gradient structure does not match parameters")


def sgd_update(params, grads, state: OptimizerState | None, lr: float, momentum: float = 0.0):
    """``p <- p - lr * m`` with ``m <- momentum * m + g`` (plain SGD when momentum is 0)."""
    _check_shapes(params, grads)
    if state is None:
        state = OptimizerState(0, {"mu": ad.tree_map(np.zeros_like, params)})
    if momentum:
        mu = ad.tree_map(lambda m, g: momentum * m + g, state.slots["mu"], grads)
    else:
        mu = grads
    new = ad.tree_map(lambda p, m: p - np.asarray(lr * m, dtype=np.asarray(p).dtype), params, mu)
    return new, OptimizerState(state.step + 1, {"mu": mu if momentum else state.slots["mu"]})


def adam_update(params, grads, state: OptimizerState | None, lr: float, b1: float = 0.9,
                b2: float = 0.999, eps: float = 1e-8):
    """One bias-corrected Adam step."""
    _check_shapes(params, grads)
    if state is None:
        state = OptimizerState(0, {"m": ad.tree_map(np.zeros_like, params),
                                   "v": ad.tree_map(np.zeros_like, params)})
    step = state.step + 1
    m = ad.tree_map(lambda m, g: b1 * m + (1 - b1) * g, state.slots["m"], grads)
    v = ad.tree_map(lambda v, g: b2 * v + (1 - b2) * g * g, state.slots["v"], grads)
    c1 = 1 - b1 ** step
    c2 = 1 - b2 ** step

    def upd(p, m, v):
        delta = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        return p - delta.astype(p.dtype, copy=False)

    new = ad.tree_map(upd, params, m, v)
    return new, OptimizerState(step, {"m": m, "v": v})


@dataclass(frozen=True)
class Optimizer:
    kind: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.0
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8

    def init(self, params) -> OptimizerState:
        if self.kind == "adam":
            return OptimizerState(0, {"m": ad.tree_map(np.zeros_like, params),
                                      "v": ad.tree_map(np.zeros_like, params)})
        if self.kind == "sgd":
            return OptimizerState(0, {"mu": ad.tree_map(np.zeros_like, params)})
        raise ArgumentError(f"unknown optimizer {self.kind!r}")

    def update(self, params, grads, state):
        if self.kind == "adam":
            return adam_update(params, grads, state, self.lr, self.b1, self.b2, self.eps)
        return sgd_update(params, grads, state, self.lr, self.momentum)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.0
    loss: str = "integral_crossentropy"
    rate_hi: float = 1.0
    rate_lo: float = 0.0
    reg_f_min: float = 0.0
    reg_f_max: float = 1.0
    reg_lam_low: float = 0.0
    reg_lam_high: float = 0.0
    seed: int = 0
    unroll: int = 32
    augment_shift: int = 0
    augment_axes: tuple = (-1,)

    def __post_init__(self):
        if self.epochs < 0:
            raise ArgumentError("epochs must be >= 0")
        if self.batch_size < 1 or self.unroll < 1:
            raise ArgumentError("batch_size and unroll must be positive")
        if not self.lr >= 0:
            raise ArgumentError("learning rate must be non-negative")
        if self.loss not in LOSSES:
            raise ArgumentError(f"unknown loss {self.loss!r}")

    def optimizer_obj(self) -> Optimizer:
        return Optimizer(self.optimizer, self.lr, self.momentum)


class TrainState(NamedTuple):
    params: dict
    opt_state: OptimizerState


def make_loss_fn(spec: network.NetworkSpec, config: TrainConfig) -> Callable:
    """``f(params, events, targets) -> (loss, (trace, counts))`` on unpacked events."""
    loss_fn = LOSSES[config.loss]
    regularize = config.reg_lam_low > 0 or config.reg_lam_high > 0

    def net_eval(params, events, targets):
        trace, counts = network.apply(spec, params, events, config.unroll)
        if config.loss == "spike_rate_mse":
            loss = loss_fn(trace, targets, config.rate_hi, config.rate_lo)
        else:
            loss = loss_fn(trace, targets)
        if regularize and counts:
            steps = np.shape(ad.value_of(trace))[1]
            loss = loss + activity_regularizer(counts, steps, config.reg_f_min, config.reg_f_max,
                                               config.reg_lam_low, config.reg_lam_high)
        return loss, (trace, counts)

    return net_eval


def make_train_step(spec: network.NetworkSpec, config: TrainConfig, original_T: int):
    """Build ``step(state, (packed_events, targets), rng=None) -> (state, loss, trace)``.

    One call unpacks the time axis, runs forward and backward, and applies
    the optimizer update.
    """
    loss_and_grad = ad.value_and_grad(make_loss_fn(spec, config), has_aux=True)
    opt = config.optimizer_obj()

    def train_step(state: TrainState, batch, rng: T.RngKey | None = None):
        packed, targets = batch
        events = unpack_time(packed, original_T, time_axis=1)
        if config.augment_shift and rng is not None:
            events = shift_augment(events, config.augment_shift, config.augment_axes, rng)
        (loss, (trace, _)), grads = loss_and_grad(state.params, events, targets)
        if not np.isfinite(loss):
            raise NumericError(f"loss became {loss}")
        params, opt_state = opt.update(state.params, grads, state.opt_state)
        # NaN weights upstream of a spiking layer just read as "no spike",
        # so a finite loss alone does not prove the update was sane
        for p in ad.tree_leaves(params):
            if not np.all(np.isfinite(p)):
                raise NumericError("parameter update produced non-finite values")
        return TrainState(params, opt_state), loss, trace

    return train_step


def _as_packed(dataset) -> PackedDataset:
    if isinstance(dataset, PackedDataset):
        return dataset
    if isinstance(dataset, RasterDataset):
        from .data import pack_dataset
        return pack_dataset(dataset)
    raise ArgumentError(f"expected a dataset, got {type(dataset).__name__}")


def train(spec: network.NetworkSpec, config: TrainConfig, dataset, params=None,
          on_epoch: Callable | None = None):
    """Train for ``config.epochs`` epochs; returns ``(params, metrics)``.

    ``metrics`` holds one dict per epoch with mean loss, training accuracy
    over the epoch's batches and wall time in milliseconds.
    """
    dataset = _as_packed(dataset)
    k_init, k_epochs = T.split(T.key(config.seed))
    if params is None:
        params = network.init(spec, k_init)
    state = TrainState(params, config.optimizer_obj().init(params))
    step = make_train_step(spec, config, dataset.original_T)
    epoch_keys = T.split(k_epochs, max(config.epochs, 1))
    metrics = []
    for epoch in range(config.epochs):
        start = time.perf_counter()
        k_shuf, k_aug = T.split(epoch_keys[epoch])
        xb, yb = shuffle(dataset, config.batch_size, k_shuf)
        aug_keys = T.split(k_aug, len(xb))
        losses, correct = [], 0.0
        for i in range(len(xb)):
            state, loss, trace = step(state, (xb[i], yb[i]), aug_keys[i])
            losses.append(loss)
            correct += integral_accuracy(trace, yb[i]) * len(yb[i])
        row = {"epoch": epoch, "loss": float(np.mean(losses)),
               "acc": correct / yb.size,
               "wall_ms": (time.perf_counter() - start) * 1e3}
        metrics.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return state.params, metrics


def evaluate(spec: network.NetworkSpec, params, dataset, batch_size: int = 256,
             unroll: int = 32) -> float:
    """Integral accuracy over every example (no dropping, no shuffling)."""
    dataset = _as_packed(dataset)
    correct = 0.0
    n = len(dataset)
    for i in range(0, n, batch_size):
        events = unpack_time(dataset.x_packed[i:i + batch_size], dataset.original_T, 1)
        trace, _ = network.apply(spec, params, events, unroll)
        correct += integral_accuracy(trace, dataset.y[i:i + batch_size]) * len(events)
    return correct / n


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def save_checkpoint(path, params, opt_state: OptimizerState | None = None,
                    config_text: str = "") -> None:
    arrays = {}
    layout = {"params": [], "slots": {}}
    for layer, named in params.items():
        for name, arr in named.items():
            arrays[f"p:{layer}:{name}"] = np.asarray(arr)
            layout["params"].append([layer, name])
    step = 0
    if opt_state is not None:
        step = opt_state.step
        for slot, tree in opt_state.slots.items():
            layout["slots"][slot] = []
            for layer, named in tree.items():
                for name, arr in named.items():
                    arrays[f"s:{slot}:{layer}:{name}"] = np.asarray(arr)
                    layout["slots"][slot].append([layer, name])
    meta = {"layout": layout, "step": step, "has_opt": opt_state is not None,
            "config": config_text, "config_hash": config_hash(config_text)}
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    Path(path).write_bytes(buf.getvalue())


def load_checkpoint(path):
    """Return ``(params, opt_state or None, config_text)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            params = {}
            for layer, name in meta["layout"]["params"]:
                params.setdefault(layer, {})[name] = z[f"p:{layer}:{name}"]
            opt = None
            if meta["has_opt"]:
                slots = {}
                for slot, entries in meta["layout"]["slots"].items():
                    tree = {}
                    for layer, name in entries:
                        tree.setdefault(layer, {})[name] = z[f"s:{slot}:{layer}:{name}"]
                    slots[slot] = tree
                opt = OptimizerState(meta["step"], slots)
    except (KeyError, ValueError, OSError) as e:
        raise FormatError(f"unreadable checkpoint {path}: {e}") from None
    if config_hash(meta["config"]) != meta["config_hash"]:
        raise FormatError("checkpoint config hash mismatch")
    return params, opt, meta["config"]
