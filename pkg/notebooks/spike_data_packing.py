"""
Rasterizing and bit-packing spike data
======================================

Event streams become dense binary grids, and grids are stored eight
timesteps to a byte. Training unpacks one batch at a time.
"""

import tempfile
from pathlib import Path

import numpy as np

from pulsenet import data
from pulsenet import tensor as T

# A toy cochlea recording: 700 channels over one second (timestamps in µs).
rng = np.random.default_rng(0)
n = 5000
events = data.EventStream(np.sort(rng.uniform(0, 1e6, n)),
                          rng.integers(0, 700, size=(n, 1)), (700,))
grid = data.rasterize(events, 256)
print("raster", grid.shape, "density", grid.mean().round(4))

# Packing along time, most significant bit first.
packed = data.pack_time(grid[None], time_axis=1)
print("packed", packed.shape, f"{1 - packed.nbytes / grid.nbytes:.1%} smaller")
print("bits 1,0,0,0,0,0,0,0 ->", hex(data.pack_time(np.array([[1, 0, 0, 0, 0, 0, 0, 0]]), 1)[0, 0]))

# Round trip, including a T that is not a multiple of eight.
odd = T.bernoulli(T.key(1), 0.5, (4, 21, 3))
assert np.array_equal(data.unpack_time(data.pack_time(odd, 1), 21, 1), odd)

# Shuffling drops the N % batch remainder each epoch.
ds = data.synth_rate_coded(2, 10, 16, 8, T.key(2))
obs, labels = data.shuffle(ds, 4, T.key(3))
print("batches", obs.shape[:2], "labels", labels.tolist())

# Random circular shifts for augmentation.
print("shifted:", data.shift_augment(np.arange(8), 2, (0,), T.key(4)))

# Datasets live in a small binary container.
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "toy.pnsd"
    data.write_container(path, data.pack_dataset(data.RasterDataset(grid[None], np.array([3]))))
    back = data.read_container(path)
    print("container bytes", path.stat().st_size, "original_T", back.original_T)
