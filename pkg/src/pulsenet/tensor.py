"""Dense array kernels and a splittable counter-based RNG.

Arrays are plain row-major ``numpy.ndarray`` objects restricted to the
dtypes in :data:`DTYPES`. Every kernel here is forward-only; the
differentiable wrappers live in :mod:`pulsenet.autodiff`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ArgumentError, DimensionError

DTYPES = {
    "f32": np.dtype(np.float32),
    "f64": np.dtype(np.float64),
    "u8": np.dtype(np.uint8),
    "i32": np.dtype(np.int32),
}


def as_tensor(data, dtype: str | np.dtype | None = None) -> np.ndarray:
    """Return a C-contiguous array with one of the supported dtypes."""
    if isinstance(dtype, str):
        if dtype not in DTYPES:
            raise ArgumentError(f"unsupported dtype {dtype!r}")
        dtype = DTYPES[dtype]
    arr = np.ascontiguousarray(data, dtype=dtype)
    if dtype is None:
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        elif arr.dtype.kind in "iu" and arr.dtype != np.uint8:
            arr = arr.astype(np.int32)
    if arr.dtype not in DTYPES.values():
        raise ArgumentError(f"unsupported dtype {arr.dtype}")
    return arr


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (int, np.integer)):
        return int(v), int(v)
    a, b = v
    return int(a), int(b)


GEMM_ROWS = 64


def rowwise_gemm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` for 2-d operands, computed in fixed blocks of ``GEMM_ROWS`` rows.

    BLAS may round a row differently depending on how many rows share the
    call. Always handing it the same block height (zero-padding the last
    block) makes each output row independent of the batch it arrived in,
    so time-blocked and whole-sequence schedules agree bit for bit.
    """
    n = a.shape[0]
    out = np.empty((n, b.shape[1]), dtype=np.result_type(a, b))
    full = n - n % GEMM_ROWS
    for i in range(0, full, GEMM_ROWS):
        np.matmul(a[i:i + GEMM_ROWS], b, out=out[i:i + GEMM_ROWS])
    if full < n:
        tail = np.zeros((GEMM_ROWS, a.shape[1]), dtype=a.dtype)
        tail[:n - full] = a[full:]
        out[full:] = (tail @ b)[:n - full]
    return out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product, batched over the leading dimensions of ``a``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim < 1 or b.ndim < 1:
        raise DimensionError("matmul needs at least 1-d operands")
    k_b = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if a.shape[-1] != k_b:
        raise DimensionError(f"matmul inner dimensions differ: {a.shape} x {b.shape}")
    if a.ndim >= 2 and b.ndim == 2:
        lead = a.shape[:-1]
        return rowwise_gemm(a.reshape(-1, a.shape[-1]), b).reshape(lead + (b.shape[1],))
    return np.matmul(a, b)


def conv_padding(padding, kernel: tuple[int, int], stride: tuple[int, int],
                 size: tuple[int, int]) -> tuple[tuple[int, int], tuple[int, int]]:
    """Resolve a padding mode into ((top, bottom), (left, right))."""
    if isinstance(padding, str):
        if padding == "valid":
            return (0, 0), (0, 0)
        if padding == "same":
            pads = []
            for n, k, s in zip(size, kernel, stride):
                out = -(-n // s)
                total = max((out - 1) * s + k - n, 0)
                pads.append((total // 2, total - total // 2))
            return pads[0], pads[1]
        raise ArgumentError(f"unknown padding mode {padding!r}")
    ph, pw = _pair(padding)
    return (ph, ph), (pw, pw)


def conv2d_output_shape(in_hw, kernel, stride=1, padding="valid") -> tuple[int, int]:
    kernel, stride = _pair(kernel), _pair(stride)
    (pt, pb), (pl, pr) = conv_padding(padding, kernel, stride, tuple(in_hw))
    h = in_hw[0] + pt + pb
    w = in_hw[1] + pl + pr
    if kernel[0] > h or kernel[1] > w:
        raise DimensionError(f"kernel {kernel} larger than padded input {(h, w)}")
    return (h - kernel[0]) // stride[0] + 1, (w - kernel[1]) // stride[1] + 1


def _windows(x, kernel, stride, pads):
    (pt, pb), (pl, pr) = pads
    if pt or pb or pl or pr:
        x = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    if kernel[0] > x.shape[2] or kernel[1] > x.shape[3]:
        raise DimensionError(f"kernel {kernel} larger than padded input {x.shape[2:]}")
    win = sliding_window_view(x, kernel, axis=(2, 3))
    return win[:, :, ::stride[0], ::stride[1]]


def conv2d(x: np.ndarray, kernels: np.ndarray, stride=1, padding="valid") -> np.ndarray:
    """2-D cross-correlation of ``x`` [B,C,H,W] with ``kernels`` [F,C,Kh,Kw]."""
    x = np.asarray(x)
    kernels = np.asarray(kernels)
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError("conv2d expects 4-d input and kernels")
    if x.shape[1] != kernels.shape[1]:
        raise DimensionError(
            f"input has {x.shape[1]} channels but kernels expect {kernels.shape[1]}")
    kernel = kernels.shape[2:]
    stride = _pair(stride)
    pads = conv_padding(padding, kernel, stride, x.shape[2:])
    win = _windows(x, kernel, stride, pads)
    # [B,Ho,Wo,C,Kh,Kw] rows against [C*Kh*Kw, F]
    b, ho, wo = win.shape[0], win.shape[2], win.shape[3]
    rows = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, -1)
    out = rowwise_gemm(rows, kernels.reshape(kernels.shape[0], -1).T)
    return np.ascontiguousarray(out.reshape(b, ho, wo, -1).transpose(0, 3, 1, 2))


def conv2d_grad_kernels(x, g, kernel_shape, stride=1, padding="valid"):
    kernel = tuple(kernel_shape[2:])
    stride = _pair(stride)
    pads = conv_padding(padding, kernel, stride, x.shape[2:])
    win = _windows(x, kernel, stride, pads)
    # g [B,F,Ho,Wo], win [B,C,Ho,Wo,Kh,Kw] -> [F,C,Kh,Kw]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))


def conv2d_grad_input(g, kernels, input_shape, stride=1, padding="valid"):
    kernel = kernels.shape[2:]
    stride = _pair(stride)
    (pt, pb), (pl, pr) = conv_padding(padding, kernel, stride, tuple(input_shape[2:]))
    b, c, h, w = input_shape
    ho, wo = g.shape[2:]
    dx = np.zeros((b, c, h + pt + pb, w + pl + pr), dtype=np.result_type(g, kernels))
    for i in range(kernel[0]):
        for j in range(kernel[1]):
            contrib = np.tensordot(g, kernels[:, :, i, j], axes=([1], [0]))
            dx[:, :, i:i + stride[0] * ho:stride[0], j:j + stride[1] * wo:stride[1]] += \
                contrib.transpose(0, 3, 1, 2)
    return dx[:, :, pt:pt + h, pl:pl + w]


def maxpool2d_output_shape(in_hw, window, ceil: bool = True) -> tuple[int, int]:
    kh, kw = _pair(window)
    if kh <= 0 or kw <= 0:
        raise ArgumentError("pooling window must be positive")
    if ceil:
        return -(-in_hw[0] // kh), -(-in_hw[1] // kw)
    return in_hw[0] // kh, in_hw[1] // kw


def _pool_blocks(x, window, ceil):
    kh, kw = _pair(window)
    ho, wo = maxpool2d_output_shape(x.shape[-2:], (kh, kw), ceil)
    if ho == 0 or wo == 0:
        raise DimensionError(f"window {(kh, kw)} larger than input {x.shape[-2:]}")
    h, w = x.shape[-2:]
    if ceil and (h % kh or w % kw):
        padded = np.full(x.shape[:-2] + (ho * kh, wo * kw), -np.inf, dtype=x.dtype)
        padded[..., :h, :w] = x
        x = padded
    else:
        x = x[..., :ho * kh, :wo * kw]
    lead = x.shape[:-2]
    blocks = x.reshape(lead + (ho, kh, wo, kw))
    nd = len(lead)
    blocks = np.moveaxis(blocks, nd + 2, nd + 1)  # [..., ho, wo, kh, kw]
    return blocks.reshape(lead + (ho, wo, kh * kw))


def maxpool2d(x: np.ndarray, window, ceil: bool = True) -> np.ndarray:
    """Non-overlapping max pooling over the last two axes.

    With ``ceil=True`` ragged edges are padded with ``-inf``; otherwise the
    remainder rows/columns are dropped.
    """
    x = np.asarray(x)
    return _pool_blocks(x, window, ceil).max(axis=-1)


def maxpool2d_backward(x, g, window, ceil: bool = True):
    """Route ``g`` to the first maximal element of every window."""
    kh, kw = _pair(window)
    blocks = _pool_blocks(np.asarray(x), (kh, kw), ceil)
    idx = blocks.argmax(axis=-1)
    routed = np.zeros(blocks.shape, dtype=g.dtype)
    np.put_along_axis(routed, idx[..., None], g[..., None], axis=-1)
    lead = routed.shape[:-3]
    ho, wo = routed.shape[-3:-1]
    routed = routed.reshape(lead + (ho, wo, kh, kw))
    nd = len(lead)
    routed = np.moveaxis(routed, nd + 1, nd + 2).reshape(lead + (ho * kh, wo * kw))
    h, w = x.shape[-2:]
    out = np.zeros(x.shape, dtype=g.dtype)
    hh, ww = min(h, ho * kh), min(w, wo * kw)
    out[..., :hh, :ww] = routed[..., :hh, :ww]
    return out


def roll(t: np.ndarray, shifts: Sequence[int], axes: Sequence[int]) -> np.ndarray:
    """Circular shift of ``t`` by ``shifts[i]`` along ``axes[i]``."""
    shifts = tuple(int(s) for s in np.atleast_1d(shifts))
    axes = tuple(int(a) for a in np.atleast_1d(axes))
    if len(shifts) != len(axes):
        raise ArgumentError("roll needs one shift per axis")
    t = np.asarray(t)
    for a in axes:
        if not -t.ndim <= a < t.ndim:
            raise DimensionError(f"axis {a} out of bounds for {t.ndim}-d tensor")
    return np.roll(t, shifts, axes)


# --------------------------------------------------------------------------
# Random numbers
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RngKey:
    """Immutable key for a Philox stream; a key never changes once made.

    Drawing twice from the same key yields the same numbers. Use
    :func:`split` to derive independent children.
    """

    seed: int
    path: tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        return np.random.Generator(np.random.Philox(seq))


def key(seed: int) -> RngKey:
    if seed < 0:
        raise ArgumentError("seed must be non-negative")
    return RngKey(int(seed))


def split(k: RngKey, num: int = 2) -> tuple[RngKey, ...]:
    if num < 1:
        raise ArgumentError("split needs num >= 1")
    return tuple(RngKey(k.seed, k.path + (i,)) for i in range(num))


def randint(k: RngKey, shape, lo: int, hi: int) -> np.ndarray:
    """Integers in ``[lo, hi)``."""
    if not lo < hi:
        raise ArgumentError(f"randint needs lo < hi, got [{lo}, {hi})")
    return k.generator().integers(lo, hi, size=shape, dtype=np.int64)


def permutation(k: RngKey, n: int) -> np.ndarray:
    if n < 0:
        raise ArgumentError("permutation size must be non-negative")
    return k.generator().permutation(n)


def uniform(k: RngKey, shape, lo=0.0, hi=1.0, dtype="f64") -> np.ndarray:
    if not lo < hi:
        raise ArgumentError("uniform needs lo < hi")
    return k.generator().uniform(lo, hi, size=shape).astype(DTYPES.get(dtype, dtype))


def normal(k: RngKey, shape, mean=0.0, std=1.0, dtype="f64") -> np.ndarray:
    return k.generator().normal(mean, std, size=shape).astype(DTYPES.get(dtype, dtype))


def truncated_normal(k: RngKey, shape, mean: float, std: float, lo: float, hi: float,
                     dtype="f64") -> np.ndarray:
    """Normal draws, resampling every value outside ``[lo, hi]``."""
    if not lo < hi:
        raise ArgumentError("truncated_normal needs lo < hi")
    if std <= 0:
        raise ArgumentError("truncated_normal needs std > 0")
    gen = k.generator()
    out = gen.normal(mean, std, size=shape)
    bad = (out < lo) | (out > hi)
    while bad.any():
        out[bad] = gen.normal(mean, std, size=int(bad.sum()))
        bad = (out < lo) | (out > hi)
    return np.asarray(out).astype(DTYPES.get(dtype, dtype))


def bernoulli(k: RngKey, p, shape=None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    shape = p.shape if shape is None else shape
    return (k.generator().random(size=shape) < p).astype(np.uint8)
