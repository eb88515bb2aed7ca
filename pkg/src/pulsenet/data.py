"""Spike-data pipeline: rasterization, temporal bit-packing, shuffling, augmentation.

Datasets are held in memory as ``x: [N, T, ...]`` (binary ``uint8``) with
integer labels ``y: [N]``. Packing stores eight timesteps per byte along
the time axis, MSB first, for an 8x size reduction when ``T % 8 == 0``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ArgumentError, ContractError, FormatError


@dataclass(frozen=True)
class EventStream:
    """Asynchronous events from one recording.

    ``t`` holds timestamps in microseconds, ``coords`` is ``[n, d]`` integer
    sensor coordinates, and ``polarity`` is 0/1 (or ``None`` for unipolar
    sensors such as cochlea models).
    """

    t: np.ndarray
    coords: np.ndarray
    sensor_shape: tuple
    polarity: np.ndarray | None = None
    duration: float | None = None

    def normalized(self) -> "EventStream":
        """Stable-sort events by time and shift timestamps to start at zero."""
        t = np.asarray(self.t, dtype=np.float64)
        coords = np.asarray(self.coords, dtype=np.int64).reshape(len(t), -1)
        order = np.argsort(t, kind="stable")
        t0 = t.min() if len(t) else 0.0
        pol = None if self.polarity is None else np.asarray(self.polarity)[order]
        dur = self.duration if self.duration is not None else (float(t.max() - t0) if len(t) else 0.0)
        return EventStream(t[order] - t0, coords[order], tuple(self.sensor_shape), pol, dur)


@dataclass(frozen=True)
class RasterDataset:
    x: np.ndarray  # [N, T, ...] uint8 in {0, 1}
    y: np.ndarray  # [N] int

    def __len__(self):
        return len(self.y)


@dataclass(frozen=True)
class PackedDataset:
    x_packed: np.ndarray  # [N, ceil(T/8), ...] uint8
    original_T: int
    y: np.ndarray
    bit_order: str = "big"

    def __len__(self):
        return len(self.y)

    def unpack(self) -> RasterDataset:
        return RasterDataset(unpack_time(self.x_packed, self.original_T, 1), self.y)


def rasterize(events: EventStream, T_steps: int, spatial_bins=None,
              polarity: bool = False) -> np.ndarray:
    """Bin events into a binary grid ``[T, (2,) *spatial_bins]``.

    Time is divided into ``T_steps`` equal bins over the stream duration;
    each sensor axis is divided into ``spatial_bins[i]`` equal bins (the full
    sensor resolution by default). A bin containing any event is 1.
    """
    if T_steps < 1:
        raise ArgumentError("T must be >= 1")
    ev = events.normalized()
    sensor = tuple(ev.sensor_shape)
    bins = sensor if spatial_bins is None else tuple(np.atleast_1d(spatial_bins).tolist())
    if len(bins) != len(sensor):
        raise ArgumentError(f"need one bin count per sensor axis {sensor}")
    shape = (T_steps,) + ((2,) if polarity else ()) + bins
    grid = np.zeros(shape, dtype=np.uint8)
    if len(ev.t) == 0:
        return grid
    dur = ev.duration
    if dur is None or dur <= 0:
        dur = float(ev.t.max()) or 1.0
    tb = np.minimum((ev.t * T_steps / dur).astype(np.int64), T_steps - 1)
    keep = (ev.t >= 0) & (ev.t <= dur)
    idx = [tb]
    if polarity:
        if ev.polarity is None:
            raise ArgumentError("polarity channel requested but stream has none")
        idx.append(np.asarray(ev.polarity, dtype=np.int64))
    for axis, (n, b) in enumerate(zip(sensor, bins)):
        c = ev.coords[:, axis]
        keep &= (c >= 0) & (c < n)
        idx.append(np.minimum(c * b // n, b - 1))
    idx = tuple(i[keep] for i in idx)
    grid[idx] = 1
    return grid


def _check_binary(x):
    x = np.asarray(x)
    if x.dtype == np.bool_:
        return x.astype(np.uint8)
    if not np.isin(x, (0, 1)).all():
        raise ContractError("pack_time expects a binary tensor")
    return x.astype(np.uint8, copy=False)


def pack_time(x, time_axis: int = 1) -> np.ndarray:
    """Pack a binary tensor eight timesteps per byte along ``time_axis``, MSB first.

    The time axis is zero-padded up to a byte boundary; keep the original
    length (e.g. in :class:`PackedDataset`) to undo it.
    """
    x = _check_binary(x)
    return np.packbits(x, axis=time_axis, bitorder="big")


def unpack_time(packed, original_T: int, time_axis: int = 1) -> np.ndarray:
    """Inverse of :func:`pack_time`; padding bits are discarded."""
    packed = np.asarray(packed)
    if packed.dtype != np.uint8:
        raise FormatError(f"packed data must be uint8, got {packed.dtype}")
    n_bytes = packed.shape[time_axis]
    if n_bytes != -(-original_T // 8):
        raise FormatError(f"{n_bytes} packed bytes cannot hold T={original_T} "
                          f"(expected {-(-original_T // 8)})")
    return np.unpackbits(packed, axis=time_axis, count=original_T, bitorder="big")


def pack_dataset(ds: RasterDataset) -> PackedDataset:
    return PackedDataset(pack_time(ds.x, 1), int(ds.x.shape[1]), np.asarray(ds.y))


def shuffle(dataset, batch_size: int, rng: T.RngKey):
    """Permute examples and cut them into ``[n_batches, batch_size, ...]``.

    The remainder ``N % batch_size`` is dropped for this epoch; a fresh key
    next epoch draws a new permutation, so dropped examples return.
    Works on both raster and packed datasets (packing is per example).
    """
    x = dataset.x_packed if isinstance(dataset, PackedDataset) else dataset.x
    y = np.asarray(dataset.y)
    n = len(y)
    if batch_size < 1:
        raise ArgumentError("batch_size must be >= 1")
    if batch_size > n:
        raise ArgumentError(f"batch_size {batch_size} exceeds dataset size {n}")
    cutoff = (n // batch_size) * batch_size
    idx = T.permutation(rng, n)[:cutoff]
    obs = x[idx].reshape((-1, batch_size) + x.shape[1:])
    labels = y[idx].reshape(-1, batch_size)
    return obs, labels


def shift_augment(x, max_shift: int, axes, rng: T.RngKey) -> np.ndarray:
    """Roll ``x`` by one random integer in ``[-max_shift, max_shift)`` per axis."""
    if max_shift < 0:
        raise ArgumentError("max_shift must be >= 0")
    axes = tuple(np.atleast_1d(axes).tolist())
    if max_shift == 0:
        return np.asarray(x)
    shifts = T.randint(rng, (len(axes),), -max_shift, max_shift)
    return T.roll(x, shifts, axes)


# --------------------------------------------------------------------------
# Synthetic rate-coded data
# --------------------------------------------------------------------------

def class_rate_profiles(classes: int, inputs: int, rate_lo: float = 0.02,
                        rate_hi: float = 0.3) -> np.ndarray:
    """Per-class firing probabilities ``[classes, inputs]``.

    Each class has a Gaussian bump of elevated rate centred on its own
    stretch of the input population.
    """
    centres = (np.arange(classes) + 0.5) * inputs / classes
    width = max(inputs / (2.0 * classes), 1.0)
    pos = np.arange(inputs)[None, :]
    bump = np.exp(-0.5 * ((pos - centres[:, None]) / width) ** 2)
    return rate_lo + (rate_hi - rate_lo) * bump


def synth_rate_coded(classes: int, n: int, T_steps: int, inputs: int,
                     rng: T.RngKey, rate_lo: float = 0.02, rate_hi: float = 0.3) -> RasterDataset:
    """Balanced Bernoulli spike trains drawn from :func:`class_rate_profiles`."""
    if min(classes, n, T_steps, inputs) < 1:
        raise ArgumentError("all sizes must be positive")
    k_lab, k_spk = T.split(rng)
    y = np.arange(n) % classes
    y = y[T.permutation(k_lab, n)].astype(np.int32)
    rates = class_rate_profiles(classes, inputs, rate_lo, rate_hi)
    p = np.broadcast_to(rates[y][:, None, :], (n, T_steps, inputs))
    x = T.bernoulli(k_spk, p)
    return RasterDataset(x, y)


# --------------------------------------------------------------------------
# Container file
# --------------------------------------------------------------------------
# Little-endian layout:
#   magic    4s   b"PNSD"
#   version  u16
#   bitorder u8   0 = MSB first
#   dtype    u8   payload dtype code (u8 = 0)
#   ndim     u32
#   shape    ndim * u64   shape of x_packed
#   orig_T   u64
#   time_ax  u32
#   payload  prod(shape) bytes
#   labels   shape[0] * i32

MAGIC = b"PNSD"
VERSION = 1
_HEAD = struct.Struct("<4sHBBI")


def write_container(path, ds: PackedDataset) -> None:
    x = np.ascontiguousarray(ds.x_packed, dtype=np.uint8)
    y = np.ascontiguousarray(ds.y, dtype="<i4")
    if len(y) != x.shape[0]:
        raise ArgumentError("label count does not match example count")
    if ds.bit_order != "big":
        raise ArgumentError("only MSB-first packing is supported")
    parts = [_HEAD.pack(MAGIC, VERSION, 0, 0, x.ndim),
             struct.pack(f"<{x.ndim}Q", *x.shape),
             struct.pack("<QI", ds.original_T, 1),
             x.tobytes(), y.tobytes()]
    Path(path).write_bytes(b"".join(parts))


def read_container(path) -> PackedDataset:
    buf = Path(path).read_bytes()
    off = 0

    def take(n, what):
        nonlocal off
        if off + n > len(buf):
            raise FormatError(f"truncated {what}: need {n} bytes, {len(buf) - off} left", off)
        chunk = buf[off:off + n]
        off += n
        return chunk

    magic, version, bitorder, dtype, ndim = _HEAD.unpack(take(_HEAD.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if bitorder != 0:
        raise FormatError(f"unknown bit order code {bitorder}", 6)
    if dtype != 0:
        raise FormatError(f"unknown payload dtype code {dtype}", 7)
    if not 2 <= ndim <= 16:
        raise FormatError(f"implausible rank {ndim}", 8)
    shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "shape"))
    orig_off = off
    original_T, time_axis = struct.unpack("<QI", take(12, "time header"))
    if time_axis != 1:
        raise FormatError(f"unsupported time axis {time_axis}", orig_off + 8)
    if shape[1] != -(-original_T // 8):
        raise FormatError(f"packed extent {shape[1]} inconsistent with T={original_T}", orig_off)
    size = int(np.prod(shape))
    x = np.frombuffer(take(size, "payload"), dtype=np.uint8).reshape(shape).copy()
    y = np.frombuffer(take(4 * shape[0], "labels"), dtype="<i4").astype(np.int32)
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes", off)
    return PackedDataset(x, int(original_T), y)
