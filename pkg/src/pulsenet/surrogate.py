"""Spiking activations: a Heaviside forward paired with a finite surrogate backward.

Every constructor is a higher-order function that takes hyperparameters
and returns an immutable :class:`SpikingActivation`. Hyperparameters are
fixed at construction, so an activation never carries state that could
drift between calls.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import CustomGradient, register_custom
from .errors import ArgumentError


def heaviside(x):
    """1 where ``x >= 0`` (threshold inclusive), else 0, in the dtype of ``x``."""
    x = np.asarray(x)
    dtype = x.dtype if x.dtype.kind == "f" else np.float64
    return (x >= 0).astype(dtype)


def _straight_through(x):
    return np.ones_like(x)


@dataclass(frozen=True, eq=False)
class SpikingActivation:
    name: str
    fwd: Callable[[np.ndarray], np.ndarray]
    bwd: Callable[[np.ndarray], np.ndarray]
    hyper: tuple = ()
    _op: Callable = None

    def __post_init__(self):
        op = register_custom(CustomGradient(self.fwd, self.bwd), name=self.name)
        object.__setattr__(self, "_op", op)

    def __call__(self, x):
        return self._op(x)

    def __eq__(self, other):
        if not isinstance(other, SpikingActivation):
            return NotImplemented
        if self.name == "custom" or other.name == "custom":
            return self is other
        return (self.name, self.hyper) == (other.name, other.hyper)

    def __hash__(self):
        return hash((self.name, self.hyper))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.hyper)
        return f"{self.name}({args})"


def custom(bwd: Callable = _straight_through, fwd: Callable = heaviside) -> SpikingActivation:
    """Build an activation from any elementwise forward/backward pair.

    The defaults give the straight-through estimator. ``fwd`` need not be
    binary (ternary or other low-precision outputs are fine).
    """
    return SpikingActivation("custom", fwd, bwd)


def straight_through() -> SpikingActivation:
    return SpikingActivation("straight_through", heaviside, _straight_through)


def _positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ArgumentError(f"{name} must be positive, got {v}")


def superspike(k: float = 25.0) -> SpikingActivation:
    _positive(k=k)

    def grad_superspike(x):
        return 1.0 / (1.0 + k * np.abs(x)) ** 2

    return SpikingActivation("superspike", heaviside, grad_superspike, (("k", k),))


def triangular(k: float = 0.5) -> SpikingActivation:
    _positive(k=k)

    def grad_triangle(x):
        return np.maximum(0, 1 - np.abs(k * x))

    return SpikingActivation("triangular", heaviside, grad_triangle, (("k", k),))


def arctan(k: float = 2.0) -> SpikingActivation:
    """Surrogate 1 / (1 + (pi k x / 2)^2), the derivative of a scaled arctangent."""
    _positive(k=k)

    def grad_arctan(x):
        return 1.0 / (1.0 + (np.pi * k * x / 2) ** 2)

    return SpikingActivation("arctan", heaviside, grad_arctan, (("k", k),))


def boxcar(width: float = 2.0, height: float = 0.5) -> SpikingActivation:
    _positive(width=width, height=height)

    def grad_boxcar(x):
        return np.where(np.abs(x) <= width / 2, height, 0.0).astype(np.result_type(x, np.float32))

    return SpikingActivation("boxcar", heaviside, grad_boxcar,
                             (("width", width), ("height", height)))


CATALOGUE = {
    "superspike": superspike,
    "triangular": triangular,
    "arctan": arctan,
    "boxcar": boxcar,
    "straight_through": straight_through,
}


def by_name(name: str, **hyper) -> SpikingActivation:
    try:
        ctor = CATALOGUE[name]
    except KeyError:
        raise ArgumentError(f"unknown activation {name!r}; known: {sorted(CATALOGUE)}") from None
    return ctor(**hyper)
