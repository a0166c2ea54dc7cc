"""Fuse the pooled-news sequence with the price-embedding sequence.

Three fused views (bidirectional cross-attention plus a per-day graph
convolution followed by a causal convolution) are blended with the two
dense-layer outputs through a softmax over learnable logits. Ablation
flags drop individual views; the softmax renormalizes over whatever stays
active.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError
from .tensor import (
    Tensor,
    add,
    concat_rows,
    linear,
    matmul,
    mul,
    relu,
    scale,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose,
)

# Canonical blend-term order; ablation selects a subset.
BLEND_TERMS = ("news", "price", "p2n", "n2p", "gcn")
CONV_TAPS = 5


def cross_attention(
    q_seq: Tensor,
    k_seq: Tensor,
    v_seq: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
) -> Tensor:
    """softmax(QK'/sqrt(d)) V after separate projection matrices per input.

    Projections are bias-free: a key bias shifts every logit in a row by
    the same amount, which softmax ignores, so such a parameter could never
    receive a gradient.
    """
    if k_seq.shape[0] != v_seq.shape[0]:
        raise DimensionError(
            f"key and value sequences must share length, got {k_seq.shape[0]} and {v_seq.shape[0]}"
        )
    q = matmul(q_seq, wq)
    k = matmul(k_seq, wk)
    v = matmul(v_seq, wv)
    d = q.shape[1]
    logits = scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    return matmul(softmax_rows(logits), v)


def fuse_directions(news_seq: Tensor, price_seq: Tensor, params) -> tuple[Tensor, Tensor]:
    """Price-queries-news and news-queries-price, each with its own projections."""
    if news_seq.shape[0] != price_seq.shape[0]:
        raise DimensionError(
            f"news and price sequences must share length, got {news_seq.shape[0]} and {price_seq.shape[0]}"
        )
    s_p2n = cross_attention(
        price_seq, news_seq, news_seq,
        params["fusion.p2n.wq"], params["fusion.p2n.wk"], params["fusion.p2n.wv"],
    )
    s_n2p = cross_attention(
        news_seq, price_seq, price_seq,
        params["fusion.n2p.wq"], params["fusion.n2p.wk"], params["fusion.n2p.wv"],
    )
    return s_p2n, s_n2p


def day_pair_adjacency(t_window: int, cross_edges: bool = True) -> np.ndarray:
    """Symmetric-normalized adjacency over 2T nodes (news_1..T, price_1..T).

    One undirected edge links each day's news node to its price node; every
    node has a self-loop. D^{-1/2}(A+I)D^{-1/2} with D the degree of A+I.
    """
    n = 2 * t_window
    a = np.eye(n)
    if cross_edges:
        for t in range(t_window):
            a[t, t_window + t] = 1.0
            a[t_window + t, t] = 1.0
    deg = a.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    return a * inv_sqrt[:, None] * inv_sqrt[None, :]


def causal_conv(h: Tensor, taps: list[Tensor]) -> Tensor:
    """Left-padded temporal convolution: out[t] = sum_k h[t-k] @ taps[k]."""
    t_len, d = h.shape
    pad = Tensor(np.zeros((len(taps) - 1, d)))
    padded = concat_rows([pad, h])
    k0 = len(taps) - 1
    out = matmul(slice_rows(padded, k0, k0 + t_len), taps[0])
    for k in range(1, len(taps)):
        out = add(out, matmul(slice_rows(padded, k0 - k, k0 - k + t_len), taps[k]))
    return out


def gcn_fuse(news_seq: Tensor, price_seq: Tensor, params, adjacency: np.ndarray) -> Tensor:
    """One graph-conv layer over stacked [news; price] nodes, ReLU, then the
    causal convolution over the price-node rows."""
    t_len = news_seq.shape[0]
    stacked = concat_rows([news_seq, price_seq])
    hidden = relu(linear(matmul(Tensor(adjacency), stacked), params["fusion.gcn.w"], params["fusion.gcn.b"]))
    price_rows = slice_rows(hidden, t_len, 2 * t_len)
    taps = [params[f"fusion.conv.tap{k}"] for k in range(CONV_TAPS)]
    return causal_conv(price_rows, taps)


def blend(terms: dict[str, Tensor], logits: Tensor, active: list[str]) -> tuple[Tensor, np.ndarray]:
    """Softmax-weighted sum over the active terms only.

    logits is the full (1, 5) vector in BLEND_TERMS order; inactive entries
    are excluded from both the softmax and the sum.
    """
    if not active:
        raise ValueError("no active blend terms; nothing to predict from")
    indices = [BLEND_TERMS.index(name) for name in active]
    select = np.zeros((len(BLEND_TERMS), len(indices)))
    for col, idx in enumerate(indices):
        select[idx, col] = 1.0
    weights = softmax_rows(matmul(logits, Tensor(select)))  # (1, k)
    out = None
    for col, name in enumerate(active):
        piece = mul(slice_cols(weights, col, col + 1), terms[name])
        out = piece if out is None else add(out, piece)
    return out, weights.data.reshape(-1).copy()
