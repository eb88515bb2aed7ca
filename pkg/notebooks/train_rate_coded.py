"""
Training on a rate-coded task
=============================

Three classes that differ only in which input neurons fire more often.
The readout is a leaky integrator whose summed membrane acts as logits.
"""

from pulsenet import data, network as net, optimize as opt
from pulsenet import tensor as T

ds = data.synth_rate_coded(classes=3, n=600, T_steps=64, inputs=32, rng=T.key(11))
spec = net.NetworkSpec((32,), (net.Linear(64), net.LIF(), net.Linear(3), net.LI()))
cfg = opt.TrainConfig(epochs=5, batch_size=32, lr=1e-3, seed=0)


def report(row):
    print(f"epoch {row['epoch']}  loss {row['loss']:.4f}  acc {row['acc']:.3f}  "
          f"{row['wall_ms']:.0f} ms")


params, metrics = opt.train(spec, cfg, ds, on_epoch=report)
print("eval accuracy:", opt.evaluate(spec, params, ds))

# Same seed, same run.
_, again = opt.train(spec, cfg, ds)
print("deterministic:", [m["loss"] for m in metrics] == [m["loss"] for m in again])

# The spoken-digit architecture has two hidden LIF layers of 64.
shd = net.shd_spec()
print("SHD-shaped parameter count:", net.param_count(net.init(shd, T.key(0))))
