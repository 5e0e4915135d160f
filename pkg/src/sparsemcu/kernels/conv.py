"""INT8 convolution and linear kernels, dense and block-sparse.

Inputs have their zero point subtracted before any MAC, so padding (which
holds the zero-point code) contributes nothing.  Accumulation is 32-bit.
Sparse kernels touch only the elements of the kept blocks of an
EncodedWeights stream.  On large output planes each kept element is one
plane-wide MAC, neighbours feeding the same output fused into a dual MAC.
On small planes (where per-element overhead dominates on a host) they
instead gather the matching input channels per kernel tap and sum each
output's run of products in wrapping 32-bit arithmetic, which is what a
chain of dual MACs over that run computes.  Either way the result is
bit-identical to the dense kernel.
"""
from __future__ import annotations

import numpy as np

from ..codec import DenseWeights, EncodedWeights
from ..compress.quant import requantize_to
from ..errors import ShapeMismatch
from ..ir.types import QuantParams, TensorI8
from .simd import dual_mac, single_mac
from .stats import OpCounter


def weight_array(w, shape) -> np.ndarray:
    """Dense INT8 view of a weight argument (ndarray or DenseWeights)."""
    if isinstance(w, DenseWeights):
        w = w.array()
    w = np.asarray(w)
    if w.size != int(np.prod(shape)):
        raise ShapeMismatch(f"weights hold {w.size} values, layer needs {tuple(shape)}")
    return w.astype(np.int8, copy=False).reshape(shape)


def _check_encoded(enc: EncodedWeights, shape) -> None:
    if enc.original_len != int(np.prod(shape)):
        raise ShapeMismatch(f"encoded weights hold {enc.original_len} values, layer needs {tuple(shape)}")


def kept_elements(enc: EncodedWeights) -> tuple[np.ndarray, np.ndarray]:
    """Flat index and int32 value of every element of every kept block, in
    stream order (ascending).  A trailing partial block is appended."""
    starts, vals = enc.nonzero_blocks()
    flat = (starts[:, None] + np.arange(enc.block_size)).ravel()
    wv = vals.astype(np.int32).ravel()
    if enc.trailer:
        t0 = enc.original_len - len(enc.trailer)
        flat = np.concatenate([flat, np.arange(t0, enc.original_len)])
        wv = np.concatenate([wv, np.frombuffer(enc.trailer, np.int8).astype(np.int32)])
    return flat, wv


def _run_starts(keys: np.ndarray) -> np.ndarray:
    return np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])


# bound on the (positions x kept elements) product matrix held at once
_CHUNK_ELEMS = 1 << 18
# output planes at least this large are walked element by element instead
_WALK_MIN_POSITIONS = 1024


def _gather_mac(acc: np.ndarray, xs: np.ndarray, cols: np.ndarray, wv: np.ndarray,
                rows: np.ndarray) -> None:
    """acc[:, r] += sum of xs[:, c] * w over the kept elements of output r.

    ``rows`` is ascending, so each output is one contiguous run of products;
    summing a run in 32-bit wrapping arithmetic is the same as chaining dual
    MACs over it.
    """
    if not cols.size:
        return
    seg = _run_starts(rows)
    step = max(1, _CHUNK_ELEMS // cols.size)
    for p0 in range(0, xs.shape[0], step):
        prods = xs[p0:p0 + step, cols] * wv
        acc[p0:p0 + step, rows[seg]] += np.add.reduceat(prods, seg, axis=1, dtype=np.int32)


def _plane_walk(acc, planes, o, t, c, wv, kernel, stride, ho, wo) -> None:
    """acc[o] += w * (input plane of channel c shifted to tap t), per kept element.

    Consecutive elements feeding the same output go through one dual MAC.
    """
    ol, tl, cl, wl = o.tolist(), t.tolist(), c.tolist(), wv.tolist()

    def plane(k):
        i, j = divmod(tl[k], kernel)
        return planes[cl[k], i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride]

    k, n = 0, len(ol)
    while k < n:
        if k + 1 < n and ol[k + 1] == ol[k]:
            dual_mac(acc[ol[k]], wl[k], plane(k), wl[k + 1], plane(k + 1))
            k += 2
        else:
            single_mac(acc[ol[k]], wl[k], plane(k))
            k += 1


def _offset_input(x: TensorI8, pad: int) -> np.ndarray:
    xs = x.data.astype(np.int32) - np.int32(x.qparams.zero_point)
    if pad:
        xs = np.pad(xs, ((pad, pad), (pad, pad), (0, 0)))
    return xs


def _finish(acc, bias, in_scale, out: QuantParams, relu: bool) -> np.ndarray:
    acc = acc.astype(np.int64)
    if bias is not None:
        acc = acc + np.asarray(bias, dtype=np.int64)
    return requantize_to(acc, in_scale, out, relu)


def conv2d_int8(x: TensorI8, weights, bias, w_qparams: QuantParams, out_qparams: QuantParams,
                stride: int = 1, padding: int | None = None, kernel: int = 3, relu: bool = False,
                counter: OpCounter | None = None) -> TensorI8:
    """Direct convolution over an (H, W, Cin) input; weights (Cout, k, k, Cin)."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"conv input must be (H, W, C), got {x.shape}")
    pad = (kernel // 2) if padding is None else padding
    h, w, cin = x.shape
    cout = len(bias)
    shape = (cout, kernel, kernel, cin)
    ho = (h + 2 * pad - kernel) // stride + 1
    wo = (w + 2 * pad - kernel) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"input {x.shape} too small for a {kernel}x{kernel} kernel")
    xs = _offset_input(x, pad)

    def tap(i, j):
        return xs[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]

    if isinstance(weights, EncodedWeights):
        _check_encoded(weights, shape)
        flat, wv = kept_elements(weights)
        o, r = np.divmod(flat, kernel * kernel * cin)
        t, c = np.divmod(r, cin)
        if ho * wo >= _WALK_MIN_POSITIONS:
            planes = np.ascontiguousarray(xs.transpose(2, 0, 1))
            acc = np.zeros((cout, ho, wo), dtype=np.int32)
            _plane_walk(acc, planes, o, t, c, wv, kernel, stride, ho, wo)
            acc = acc.transpose(1, 2, 0)
        else:
            acc = np.zeros((ho * wo, cout), dtype=np.int32)
            order = np.argsort(t, kind="stable")   # per tap, outputs stay ascending
            o, t, c, wv = o[order], t[order], c[order], wv[order]
            bounds = np.searchsorted(t, np.arange(kernel * kernel + 1))
            for k in range(kernel * kernel):
                lo, hi = bounds[k], bounds[k + 1]
                if lo < hi:
                    xt = tap(*divmod(k, kernel)).reshape(ho * wo, cin)
                    _gather_mac(acc, xt, c[lo:hi], wv[lo:hi], o[lo:hi])
            acc = acc.reshape(ho, wo, cout)
        macs = int(flat.size) * ho * wo
    else:
        wa = weight_array(weights, shape).astype(np.int32)
        acc = np.zeros((ho, wo, cout), dtype=np.int32)
        for i in range(kernel):
            for j in range(kernel):
                acc += tap(i, j) @ wa[:, i, j, :].T
        macs = wa.size * ho * wo
    if counter is not None:
        counter.add(macs=macs)
    y = _finish(acc, bias, x.qparams.scale * w_qparams.scale, out_qparams, relu)
    return TensorI8((ho, wo, cout), y, out_qparams)


def dwconv2d_int8(x: TensorI8, weights, bias, w_qparams: QuantParams, out_qparams: QuantParams,
                  stride: int = 1, relu: bool = False, counter: OpCounter | None = None) -> TensorI8:
    """Depthwise 3x3 convolution, padding 1; weights (C, 3, 3), sparse blocks are kernel rows."""
    if x.data.ndim != 3:
        raise ShapeMismatch(f"dwconv input must be (H, W, C), got {x.shape}")
    h, w, c = x.shape
    if len(bias) != c:
        raise ShapeMismatch(f"dwconv bias has {len(bias)} channels, input has {c}")
    shape = (c, 3, 3)
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    xs = _offset_input(x, 1)
    if isinstance(weights, EncodedWeights):
        _check_encoded(weights, shape)
        flat, wv = kept_elements(weights)
        ch, t = np.divmod(flat, 9)
        acc = np.zeros((ho, wo, c), dtype=np.int32)
        for k in range(9):
            sel = t == k
            if sel.any():
                i, j = divmod(k, 3)
                xt = xs[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :]
                acc[:, :, ch[sel]] += xt[:, :, ch[sel]] * wv[sel]
        macs = int(flat.size) * ho * wo
    else:
        wa = weight_array(weights, shape).astype(np.int32)
        acc = np.zeros((ho, wo, c), dtype=np.int32)
        for i in range(3):
            for j in range(3):
                acc += xs[i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride, :] * wa[:, i, j]
        macs = wa.size * ho * wo
    if counter is not None:
        counter.add(macs=macs)
    y = _finish(acc, bias, x.qparams.scale * w_qparams.scale, out_qparams, relu)
    return TensorI8((ho, wo, c), y, out_qparams)


def linear_acc(xs: np.ndarray, weights, n_out: int, counter: OpCounter | None = None) -> np.ndarray:
    """Raw int32 accumulator ``xs @ W.T`` for zero-point-adjusted rows ``xs`` (N, in)."""
    n_in = xs.shape[-1]
    shape = (n_out, n_in)
    if isinstance(weights, EncodedWeights):
        _check_encoded(weights, shape)
        acc = np.zeros((xs.shape[0], n_out), dtype=np.int32)
        flat, wv = kept_elements(weights)
        rows, cols = np.divmod(flat, n_in)
        _gather_mac(acc, xs, cols, wv, rows)
        macs = int(flat.size) * xs.shape[0]
    else:
        wa = weight_array(weights, shape).astype(np.int32)
        acc = xs @ wa.T
        macs = wa.size * xs.shape[0]
    if counter is not None:
        counter.add(macs=macs)
    return acc


def linear_int8(x: TensorI8, weights, bias, w_qparams: QuantParams, out_qparams: QuantParams,
                relu: bool = False, flatten: bool = False,
                counter: OpCounter | None = None) -> TensorI8:
    """Fully connected layer over the last axis (or the flattened input); weights (out, in)."""
    data = x.data.reshape(1, -1) if flatten else x.data.reshape(-1, x.shape[-1] if x.shape else 1)
    n_out = len(bias)
    xs = data.astype(np.int32) - np.int32(x.qparams.zero_point)
    acc = linear_acc(xs, weights, n_out, counter)
    y = _finish(acc, bias, x.qparams.scale * w_qparams.scale, out_qparams, relu)
    out_shape = (n_out,) if flatten else tuple(x.shape[:-1]) + (n_out,)
    return TensorI8(out_shape, y, out_qparams)


def conv_maxpool_int8(x: TensorI8, weights, bias, w_qparams: QuantParams, out_qparams: QuantParams,
                      relu: bool = False, counter: OpCounter | None = None) -> TensorI8:
    """3x3 convolution (stride 1) followed by 2x2 max pooling."""
    from .pooling import maxpool2x2
    y = conv2d_int8(x, weights, bias, w_qparams, out_qparams, 1, 1, 3, relu, counter)
    return maxpool2x2(y)


__all__ = ["weight_array", "kept_elements", "conv2d_int8", "dwconv2d_int8", "linear_acc", "linear_int8",
           "conv_maxpool_int8"]
