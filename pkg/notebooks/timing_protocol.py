"""
Timing protocol
===============

One unmeasured warm-up run, then measured trials, reported as mean and
standard deviation per batch size and unroll factor.
"""

from pulsenet import bench, data, network as net, optimize as opt
from pulsenet import tensor as T

spec = net.shd_spec(inputs=64, hidden=32, classes=4)
ds = data.synth_rate_coded(4, 512, 32, 64, T.key(0), rate_lo=0.1, rate_hi=0.6)
cfg = opt.TrainConfig(epochs=1)

rows = bench.run_bench(spec, cfg, ds, batch_sizes=(64, 128, 256), unrolls=(1, 32),
                       warmup=1, trials=3)
print(bench.format_report(rows))
