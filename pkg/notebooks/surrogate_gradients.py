"""
Surrogate gradients for the spike nonlinearity
==============================================

The spike is a step function, so its true derivative is zero almost
everywhere. Training swaps in a smooth stand-in on the backward pass only.
"""

import numpy as np

from pulsenet import autodiff as ad
from pulsenet import surrogate as sg

# Forward pass: every activation is the same step, H(0) = 1.
x = np.linspace(-2.0, 2.0, 9)
print("x        ", x)
print("step     ", sg.superspike()(x))

# Backward pass: the pseudo-derivative each activation hands to BPTT.
for name in sorted(sg.CATALOGUE):
    act = sg.by_name(name)
    g = ad.grad(lambda v: act(v).sum())(x)
    print(f"{repr(act):28s}", np.round(g, 4))

# A custom pair. With no arguments it is the straight-through estimator.
ste = sg.custom()
print("custom() grad:", ad.grad(lambda v: ste(v).sum())(x))

# Sharper SuperSpike concentrates gradient near threshold.
for k in (5.0, 25.0, 100.0):
    print(f"superspike k={k:5.1f}: g(0.1) = {sg.superspike(k).bwd(np.array(0.1)):.4f}")
