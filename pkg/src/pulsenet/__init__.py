"""Spiking neural network training on a numpy backend.

Discrete leaky integrate-and-fire dynamics, surrogate-gradient BPTT,
rate-coded objectives, a bit-packed spike data pipeline and a graph
interchange format.
"""
from . import autodiff, data, interop, network, neuron, objective, optimize, surrogate, tensor
from .autodiff import grad, value_and_grad
from .network import (LI, LIF, ActivityMonitor, Conv2d, Flatten, Linear, MaxPool, NetworkSpec,
                      apply, init, layerwise_apply, nmnist_spec, shd_spec)
from .optimize import TrainConfig, evaluate, train
from .tensor import key, split

__version__ = "0.1.0"

__all__ = [
    "autodiff", "data", "interop", "network", "neuron", "objective", "optimize", "surrogate",
    "tensor", "grad", "value_and_grad", "LI", "LIF", "ActivityMonitor", "Conv2d", "Flatten",
    "Linear", "MaxPool", "NetworkSpec", "apply", "init", "layerwise_apply", "nmnist_spec",
    "shd_spec", "TrainConfig", "evaluate", "train", "key", "split",
]
