"""Differentiable layers and losses used by the pipeline."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import (
    Tensor,
    add,
    as_tensor,
    concat,
    make_result,
    matmul,
    mul,
    pad_time,
    relu,
    sigmoid,
    sub,
    take,
    tanh,
)

ACTIVATIONS = ("relu", "none")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map ``x @ weight + bias`` over the last axis."""
    if x.shape[-1] != weight.shape[0]:
        raise ValueError(f"linear: input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"linear: bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x.data @ weight.data
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)
    din = weight.shape[0]

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ weight.data.T
        gw = x.data.reshape(-1, din).T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make_result(out, parents, backward)


def activate(x: Tensor, activation: str) -> Tensor:
    if activation == "relu":
        return relu(x)
    if activation == "none":
        return x
    raise ValueError(f"unknown activation {activation!r}")


def mlp(x: Tensor, layers: Sequence[tuple[Tensor, Tensor, str]]) -> Tensor:
    """Apply ``(weight, bias, activation)`` triples in order."""
    if not layers:
        raise ValueError("mlp needs at least one layer")
    for w, b, act in layers:
        x = activate(linear(x, w, b), act)
    return x


def conv1d(seq: Tensor, kernel: Tensor, bias: Tensor | None = None, padding: int | None = None) -> Tensor:
    """1-D convolution over axis -2 of a (..., T, Din) sequence.

    ``kernel`` has shape (k, Din, Dout); default padding ``k // 2`` keeps the
    length for odd ``k``.
    """
    k, din, dout = kernel.shape
    if seq.shape[-1] != din:
        raise ValueError(f"conv1d: input width {seq.shape[-1]} != kernel width {din}")
    if padding is None:
        padding = k // 2
    T = seq.shape[-2]
    padded_len = T + 2 * padding
    if k > padded_len:
        raise ValueError(f"conv1d: kernel width {k} exceeds padded length {padded_len}")
    out_len = padded_len - k + 1
    xp = pad_time(seq, padding, padding) if padding else seq
    cols = concat([take(xp, (Ellipsis, slice(i, i + out_len), slice(None))) for i in range(k)], axis=-1)
    w = kernel.reshape(k * din, dout)
    return linear(cols, w, bias)


def conv1d_residual(
    seq: Tensor,
    kernel: Tensor,
    bias: Tensor | None = None,
    skip: Tensor | None = None,
    activation: str = "none",
) -> Tensor:
    """``act(conv1d(seq) + skip(seq))``; identity skip when widths agree.

    A centred identity kernel with zero bias therefore returns ``2 * seq``.
    """
    out = conv1d(seq, kernel, bias)
    if skip is None:
        if seq.shape[-1] != out.shape[-1]:
            raise ValueError("conv1d_residual: widths differ, a skip projection is required")
        res = seq
    else:
        res = linear(seq, skip)
    if res.shape != out.shape:
        raise ValueError("conv1d_residual: padding must preserve sequence length")
    return activate(add(out, res), activation)


def gru_cell(
    hidden: Tensor,
    inp: Tensor,
    w_input: Tensor,
    w_hidden: Tensor,
    b_input: Tensor,
    b_hidden: Tensor,
) -> Tensor:
    """One GRU step.

    Gate blocks are stacked as ``[reset, update, candidate]`` along the
    output axis. The update gate ``z`` mixes ``(1 - z) * hidden + z * cand``,
    so ``z -> 1`` returns the candidate and ``z -> 0`` keeps the state.
    """
    D = hidden.shape[-1]
    if w_input.shape != (inp.shape[-1], 3 * D) or w_hidden.shape != (D, 3 * D):
        raise ValueError("gru_cell: weight shapes do not match input/hidden widths")
    gx = linear(inp, w_input, b_input)
    gh = linear(hidden, w_hidden, b_hidden)
    r = sigmoid(add(take(gx, (Ellipsis, slice(0, D))), take(gh, (Ellipsis, slice(0, D)))))
    z = sigmoid(add(take(gx, (Ellipsis, slice(D, 2 * D))), take(gh, (Ellipsis, slice(D, 2 * D)))))
    n = tanh(add(take(gx, (Ellipsis, slice(2 * D, 3 * D))), mul(r, take(gh, (Ellipsis, slice(2 * D, 3 * D))))))
    return add(hidden, mul(z, sub(n, hidden)))


def segment_max(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    """Per-segment elementwise max of rows; empty segments give zeros.

    Ties share the gradient equally.
    """
    seg = np.asarray(segment_ids, dtype=np.int64)
    if seg.shape != (values.shape[0],):
        raise ValueError("segment_max: one segment id per row required")
    if seg.size and (seg.min() < 0 or seg.max() >= num_segments):
        raise ValueError("segment_max: segment id out of range")
    D = values.shape[1]
    out = np.zeros((num_segments, D), dtype=values.dtype)
    if seg.size == 0:
        return make_result(out, (values,), lambda g: (np.zeros_like(values.data),))
    order = np.argsort(seg, kind="stable")
    sorted_seg = seg[order]
    starts = np.flatnonzero(np.r_[True, sorted_seg[1:] != sorted_seg[:-1]])
    present = sorted_seg[starts]
    out[present] = np.maximum.reduceat(values.data[order], starts, axis=0)

    def backward(g):
        mask = values.data == out[seg]
        flat = (seg[:, None] * D + np.arange(D)[None, :]).ravel()
        counts = np.bincount(flat, weights=mask.ravel(), minlength=num_segments * D).reshape(num_segments, D)
        share = np.where(mask, g[seg] / np.maximum(counts[seg], 1.0), 0.0)
        return (share.astype(values.dtype, copy=False),)

    return make_result(out, (values,), backward)


def segment_focal_loss(
    logits: Tensor,
    segment_ids,
    targets,
    gamma: float,
) -> Tensor:
    """Focal loss of a softmax taken within each segment of ``logits``.

    ``targets[s]`` is the global row index of the true class of segment s.
    Returns one loss value per segment.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    z = logits.data
    seg = np.asarray(segment_ids, dtype=np.int64)
    tgt = np.asarray(targets, dtype=np.int64)
    S = len(tgt)
    if z.ndim != 1 or seg.shape != z.shape:
        raise ValueError("segment_focal_loss: 1-D logits with one segment id each")
    if np.any(tgt < 0) or np.any(tgt >= z.size) or np.any(seg[np.clip(tgt, 0, z.size - 1)] != np.arange(S)):
        raise IndexError("target index out of range for its segment")
    zmax = np.full(S, -np.inf)
    np.maximum.at(zmax, seg, z)
    e = np.exp(z - zmax[seg])
    denom = np.zeros(S)
    np.add.at(denom, seg, e)
    p = e / denom[seg]
    log_pt = (z[tgt] - zmax) - np.log(denom)
    pt = np.exp(log_pt)
    one_m = 1.0 - pt
    loss = -(one_m ** gamma) * log_pt

    def backward(g):
        # dL/dpt, then chain through the softmax
        if gamma == 0:
            dpt = -1.0 / pt
        else:
            dpt = gamma * one_m ** (gamma - 1) * log_pt - one_m ** gamma / pt
        coef = g * dpt * pt
        grad = -coef[seg] * p
        grad[tgt] += coef
        return (grad.astype(logits.dtype, copy=False),)

    return make_result(loss.astype(logits.dtype), (logits,), backward)


def softmax_focal_loss(logits: Tensor, target_index: int, gamma: float) -> Tensor:
    """``-(1 - p_t)^gamma * log p_t`` for a single logit vector."""
    logits = as_tensor(logits)
    n = logits.shape[0]
    if n < 1:
        raise ValueError("need at least one logit")
    if not 0 <= target_index < n:
        raise IndexError(f"target {target_index} out of range for {n} classes")
    per = segment_focal_loss(logits, np.zeros(n, dtype=np.int64), [target_index], gamma)
    return per.reshape(())


def huber_elementwise(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    if delta <= 0:
        raise ValueError("delta must be positive")
    target = as_tensor(target, pred.dtype)
    if pred.shape != target.shape:
        raise ValueError(f"huber: shape mismatch {pred.shape} vs {target.shape}")
    r = pred.data - target.data
    a = np.abs(r)
    quad = a <= delta
    out = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))

    def backward(g):
        d = np.where(quad, r, delta * np.sign(r))
        return g * d, -g * d

    return make_result(out.astype(pred.dtype, copy=False), (pred, target), backward)


def huber(pred: Tensor, target, delta: float = 1.0) -> Tensor:
    """Mean elementwise Huber loss."""
    return huber_elementwise(pred, target, delta).mean()


__all__ = [
    "ACTIVATIONS",
    "activate",
    "conv1d",
    "conv1d_residual",
    "gru_cell",
    "huber",
    "huber_elementwise",
    "linear",
    "matmul",
    "mlp",
    "segment_focal_loss",
    "segment_max",
    "softmax_focal_loss",
]
