"""Patch reprogramming onto a frozen surrogate transformer.

The fused day sequence is cut into flattened patches, lifted, and mapped
into the surrogate's embedding space by attending over learned prototypes
of a frozen vocabulary matrix. The surrogate itself is a small pre-LN
encoder whose weights are seeded once and never trained; only the
reprogramming side and the prediction head carry gradients.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import (
    Tensor,
    add,
    concat_cols,
    layer_norm,
    linear,
    matmul,
    relu,
    reshape,
    scale,
    slice_cols,
    slice_rows,
    softmax_rows,
    transpose,
)


def num_patches(t_window: int, patch_len: int, stride: int) -> int:
    if patch_len > t_window:
        raise ValueError(f"patch length {patch_len} exceeds window length {t_window}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return (t_window - patch_len) // stride + 1


def patchify(features: Tensor, patch_len: int, stride: int) -> Tensor:
    """Cut (T, d) features into flattened time-major patches of patch_len days."""
    t_window, d = features.shape
    n_p = num_patches(t_window, patch_len, stride)
    from .tensor import concat_rows

    rows = []
    for p in range(n_p):
        start = p * stride
        rows.append(reshape(slice_rows(features, start, start + patch_len), (1, patch_len * d)))
    return concat_rows(rows)


def make_prototypes(vocab: Tensor, w_proj: Tensor) -> Tensor:
    """Project the V vocabulary rows down to U prototypes along the vocab axis."""
    v_rows = vocab.shape[0]
    u_rows = w_proj.shape[1]
    if u_rows > v_rows:
        raise ValueError(f"cannot build {u_rows} prototypes from a vocabulary of {v_rows} rows")
    return matmul(transpose(w_proj), vocab)


def _split_heads_attention(q: Tensor, k: Tensor, v: Tensor, n_heads: int) -> Tensor:
    d_model = q.shape[1]
    if d_model % n_heads != 0:
        raise ValueError(f"model width {d_model} not divisible by {n_heads} heads")
    head_dim = d_model // n_heads
    outs = []
    for h in range(n_heads):
        lo, hi = h * head_dim, (h + 1) * head_dim
        qh = slice_cols(q, lo, hi)
        kh = slice_cols(k, lo, hi)
        vh = slice_cols(v, lo, hi)
        logits = scale(matmul(qh, transpose(kh)), 1.0 / math.sqrt(head_dim))
        outs.append(matmul(softmax_rows(logits), vh))
    return concat_cols(outs) if len(outs) > 1 else outs[0]


def reprogram(patches: Tensor, prototypes: Tensor, params, n_heads: int = 1) -> Tensor:
    """Lifted patches query the prototypes; prototypes provide keys and values.

    Attention projections are plain matrices (a key bias is invisible to
    softmax and would be a dead parameter).
    """
    lifted = linear(patches, params["reprog.patch_lift.w"], params["reprog.patch_lift.b"])
    q = matmul(lifted, params["reprog.attn.wq"])
    k = matmul(prototypes, params["reprog.attn.wk"])
    v = matmul(prototypes, params["reprog.attn.wv"])
    return _split_heads_attention(q, k, v, n_heads)


def backbone_forward(tokens: Tensor, params, n_layers: int, n_heads: int) -> Tensor:
    """Frozen pre-LN encoder stack with a final layer norm."""
    x = tokens
    for layer in range(n_layers):
        p = f"backbone.block{layer}"
        normed = layer_norm(x, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        q = linear(normed, params[f"{p}.attn.wq"], params[f"{p}.attn.bq"])
        k = matmul(normed, params[f"{p}.attn.wk"])
        v = linear(normed, params[f"{p}.attn.wv"], params[f"{p}.attn.bv"])
        attended = _split_heads_attention(q, k, v, n_heads)
        x = add(x, linear(attended, params[f"{p}.attn.wo"], params[f"{p}.attn.bo"]))
        normed2 = layer_norm(x, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        ff = linear(relu(linear(normed2, params[f"{p}.ffn.w1"], params[f"{p}.ffn.b1"])),
                    params[f"{p}.ffn.w2"], params[f"{p}.ffn.b2"])
        x = add(x, ff)
    return layer_norm(x, params["backbone.final_ln.g"], params["backbone.final_ln.b"])


def forward_backbone(
    prompt_token: Tensor | None,
    patch_tokens: Tensor,
    params,
    n_layers: int,
    n_heads: int,
) -> Tensor:
    """Run the frozen stack and read the prediction off the patch tokens only."""
    from .tensor import concat_rows

    n_p = patch_tokens.shape[0]
    if prompt_token is not None:
        seq = concat_rows([prompt_token, patch_tokens])
        hidden = backbone_forward(seq, params, n_layers, n_heads)
        patch_hidden = slice_rows(hidden, 1, 1 + n_p)
    else:
        patch_hidden = backbone_forward(patch_tokens, params, n_layers, n_heads)
    d_model = patch_hidden.shape[1]
    flat = reshape(patch_hidden, (1, n_p * d_model))
    return linear(flat, params["reprog.head.w"], params["reprog.head.b"])
