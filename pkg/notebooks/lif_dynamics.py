"""
Leaky integrate-and-fire dynamics
=================================

A LIF cell leaks by beta per step, adds its input, fires when the membrane
reaches threshold and then subtracts the threshold (soft reset).
"""

import numpy as np

from pulsenet import network as net
from pulsenet import neuron as nr

# Constant drive of 0.5 with beta = 0.9: the membrane climbs, fires on
# the fourth step, and keeps its overshoot after the reset.
p = nr.LIFParams(np.float64(0.9))
V = np.zeros(1)
for t in range(8):
    s, V = nr.lif_step(p, np.array([0.5]), V)
    print(f"t={t}  spike={int(s[0])}  V={V[0]:.4f}")

# The spike is decided from the membrane before the update.
s, V = nr.lif_step(nr.LIFParams(np.float64(0.5)), np.array([0.0]), np.array([1.2]))
print("\nfrom V=1.2 with no input:", int(s[0]), V[0])

# The leaky integrator readout has no threshold. With constant input it
# settles at x / (1 - beta).
trace, _ = nr.li_scan(nr.LIFParams(np.float64(0.8)), np.full((1, 200, 1), 0.3))
print("LI steady state:", trace[0, -1, 0], "expected", 0.3 / 0.2)

# Decay parameters are clipped into [0, 1] every time they are used.
_, V = nr.lif_step(nr.LIFParams(np.float64(1.7)), np.zeros(1), np.array([0.5]))
print("beta=1.7 acts like 1.0:", V[0])

# The same cell inside a network, run in blocks of 3 steps.
spec = net.NetworkSpec((1,), (net.LIF(beta_mode="fixed", beta=0.9),))
spikes, _ = net.apply(spec, {}, np.full((1, 8, 1), 0.5), unroll=3)
print("network spikes:", spikes[0, :, 0].astype(int))
