"""Differentiable sparse operators: submanifold convolution and sparse max pooling."""

from __future__ import annotations

import numpy as np

from ..engine.tensor import DimensionError, Tensor, make_result
from .tensor import CoordSet, SparseTensor4D, segment_max, scatter_rows


def submanifold_conv(st: SparseTensor4D, weight: Tensor, bias: Tensor | None, extent) -> SparseTensor4D:
    """Convolution evaluated only at active sites; the output site set is the input's.

    ``weight`` has shape (K, Cin, Cout) where K = prod(extent) and the
    offset order follows :func:`kernel_offsets`.
    """
    extent = (int(extent),) * 4 if np.isscalar(extent) else tuple(int(e) for e in extent)
    K = int(np.prod(extent))
    x = st.feats
    cin = x.shape[1]
    if weight.ndim != 3 or weight.shape[0] != K or weight.shape[1] != cin:
        raise DimensionError(f"submanifold_conv: weight {weight.shape} does not fit extent {extent} and {cin} input channels")
    cout = weight.shape[2]
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"submanifold_conv: bias {bias.shape} does not match {cout} output channels")
    book = st.cs.rulebook(extent)
    X, W = x.data, weight.data
    out = np.zeros((len(st), cout), dtype=X.dtype)
    if bias is not None:
        out += bias.data
    for k, o, i in book:
        # output rows are unique within one offset, so fancy += is safe
        out[o] += X[i] @ W[k]

    def backward(g):
        if weight.requires_grad:
            gw = np.zeros_like(W)
            for k, o, i in book:
                gw[k] = X[i].T @ g[o]
            weight.accumulate(gw)
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            gx = np.zeros_like(X)
            for k, o, i in book:
                gx[i] += g[o] @ W[k].T
            x.accumulate(gx)

    parents = [x, weight] if bias is None else [x, weight, bias]
    return st.replace(make_result(out, parents, backward))


def pool_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return max((size + 2 * padding - kernel) // stride + 1, 1)


def sparse_max_pool(st: SparseTensor4D, kernel: int = 3, stride: int = 2, padding: int = 1) -> SparseTensor4D:
    """Max pooling over all four axes that only emits non-empty windows.

    Output site ``o`` covers inputs ``[stride*o - padding, stride*o - padding + kernel)``
    per axis.  Ties route the gradient to the lowest input row.
    """
    res_in = np.asarray(st.resolution)
    res_out = np.array([pool_output_extent(int(r), kernel, stride, padding) for r in res_in])
    M = len(st)
    C = st.channels
    if M == 0:
        cs = CoordSet(np.zeros((0, 5), dtype=np.int64), tuple(res_out), st.batch_size)
        return SparseTensor4D(cs, make_result(np.zeros((0, C), dtype=st.feats.data.dtype), [st.feats], lambda g: None))
    dims = np.array([st.batch_size, *res_out], dtype=np.int64)
    strides = np.cumprod(np.r_[1, dims[:0:-1]])[::-1]
    # every window containing a site, per axis, combined by broadcasting to (M, R, R, R, R)
    R = (kernel - 1) // stride + 1
    valid = np.ones((M, 1, 1, 1, 1), dtype=bool)
    key = (st.coords[:, 0] * strides[0]).reshape(M, 1, 1, 1, 1)
    for axis in range(4):
        i = st.coords[:, axis + 1:axis + 2]
        o = (i + padding) // stride - np.arange(R)
        lo = stride * o - padding
        ok = (o >= 0) & (o < res_out[axis]) & (i >= lo) & (i < lo + kernel)
        shape = [M, 1, 1, 1, 1]
        shape[axis + 1] = R
        valid = valid & ok.reshape(shape)
        key = key + (o * strides[axis + 1]).reshape(shape)
    src, flat = np.nonzero(valid.reshape(M, -1))
    keys = np.broadcast_to(key, valid.shape).reshape(M, -1)[src, flat]
    uniq, seg = np.unique(keys, return_inverse=True)
    seg = seg.reshape(-1)
    # src is ascending, so a stable sort by segment keeps lower rows first
    order = np.argsort(seg, kind="stable")
    src, seg = src[order], seg[order]
    starts = np.searchsorted(seg, np.arange(uniq.size))
    cs = CoordSet(np.column_stack(np.unravel_index(uniq, tuple(dims))), tuple(res_out), st.batch_size)
    x = st.feats
    vals = x.data[src]
    out, win = segment_max(vals, starts)
    win = src[win]

    def backward(g):
        x.accumulate(scatter_rows(win, g, x.shape[0]))

    return SparseTensor4D(cs, make_result(out, [x], backward))


def global_sparse_max_pool(st: SparseTensor4D) -> Tensor:
    """Per-batch, per-channel max over every active site: (B, C)."""
    b = st.coords[:, 0]
    counts = np.bincount(b, minlength=st.batch_size)
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise ValueError(f"global_sparse_max_pool: batch entries {missing} have no active sites")
    order = np.argsort(b, kind="stable")
    starts = np.searchsorted(b[order], np.arange(st.batch_size))
    x = st.feats
    vals = x.data[order]
    out, win = segment_max(vals, starts)
    win = order[win]
    C = st.channels

    def backward(g):
        x.accumulate(scatter_rows(win, g, x.shape[0]))

    return make_result(out, [x], backward)
