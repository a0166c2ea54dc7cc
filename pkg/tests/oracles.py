"""Independent scalar-loop oracles.

Everything here is pure Python over nested lists (math.exp, explicit
loops), deliberately sharing no code with the package so the two routes
can disagree. Used to freeze expected values for the equation tests.
"""

from __future__ import annotations

import math


def softmax_vec(logits):
    m = max(logits)
    exps = [math.exp(x - m) for x in logits]
    total = sum(exps)
    return [e / total for e in exps]


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def mat_vec(m, v):
    return [dot(row, v) for row in m]


def weighted_rows(weights, rows):
    d = len(rows[0])
    out = [0.0] * d
    for w, row in zip(weights, rows):
        for j in range(d):
            out[j] += w * row[j]
    return out


def pool_ap_oracle(news, w):
    logits = [dot(w, row) for row in news]
    return weighted_rows(softmax_vec(logits), news)


def pool_cap_oracle(news, name_emb, w_c):
    # query = e W_c, logits = query . row
    d = len(name_emb)
    query = [sum(name_emb[i] * w_c[i][j] for i in range(d)) for j in range(d)]
    logits = [dot(query, row) for row in news]
    return weighted_rows(softmax_vec(logits), news)


def pool_sap_oracle(news, name_emb, w_s):
    rows = [list(name_emb)] + [list(r) for r in news]
    logits = [dot(w_s, row) for row in rows]
    return weighted_rows(softmax_vec(logits), rows)


def sinusoid_oracle(pos, j, d):
    if j % 2 == 0:
        return math.sin(pos / (10000.0 ** (j / d)))
    return math.cos(pos / (10000.0 ** ((j - 1) / d)))


def pool_pasap_oracle(news, name_emb, w_p):
    d = len(name_emb)
    rows = []
    for pos, row in enumerate(news):
        rows.append([row[j] + name_emb[j] + sinusoid_oracle(pos, j, d) for j in range(d)])
    logits = [dot(w_p, row) for row in rows]
    return weighted_rows(softmax_vec(logits), rows)


def linear_oracle(x_rows, w, b):
    n_out = len(w[0])
    out = []
    for row in x_rows:
        out.append([dot(row, [w[i][j] for i in range(len(row))]) + b[j] for j in range(n_out)])
    return out


def scaled_attention_oracle(q_rows, k_rows, v_rows, denom):
    out = []
    for q in q_rows:
        logits = [dot(q, k) / denom for k in k_rows]
        out.append(weighted_rows(softmax_vec(logits), v_rows))
    return out


def cross_attention_oracle(q_in, kv_in, wq, wk, wv):
    """Full op: bias-free per-input projections then softmax(QK'/sqrt(d))V."""
    zeros = [0.0] * len(wq[0])
    q = linear_oracle(q_in, wq, zeros)
    k = linear_oracle(kv_in, wk, zeros)
    v = linear_oracle(kv_in, wv, zeros)
    d = len(q[0])
    return scaled_attention_oracle(q, k, v, math.sqrt(d))
