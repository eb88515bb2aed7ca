"""
Exporting and importing models
==============================

The interchange graph describes continuous-time neurons. Exporting turns
each decay beta into a time constant tau = dt / (1 - beta) and folds the
matching input gain into the weights; importing undoes both.
"""

import tempfile
from pathlib import Path

import numpy as np

from pulsenet import interop, network as net
from pulsenet import tensor as T

spec = net.nmnist_spec()
params = net.init(spec, T.key(0))
doc = interop.export_graph(spec, params, dt=1e-3)
for name in interop.chain_order(doc):
    print(f"{name:10s} {type(doc.nodes[name]).__name__}")

print("tau of the first cell:", float(doc.nodes["lif_2"].tau))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "nmnist.pngr"
    interop.write_graph(path, doc)
    spec2, params2 = interop.import_graph(interop.read_graph(path))

x = T.bernoulli(T.key(1), 0.2, (2, 12, 2, 34, 34)).astype(np.float32)
a, _ = net.apply(spec, params, x)
b, _ = net.apply(spec2, params2, x)
print("max readout difference after the round trip:", np.abs(a - b).max())
