"""Pairwise self-attention over encoder states.

For every ordered token pair (t, t'):

    g[t,t'] = tanh(W_g h_t + W_g' h_t' + b_g)
    a[t,t'] = sigmoid(W_a g[t,t'] + b_a)

and the attention-focused state is the weighted sum
l_t = sum_t' a[t,t'] * h_t'. Scores are sigmoid-valued per pair, so
rows are deliberately NOT normalized to sum to one; pairs touching a
masked position are exactly zero.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, ShapeError


@dataclass
class AttentionParams:
    w_g: ad.Tensor       # d_h x d_a
    w_g_prime: ad.Tensor # d_h x d_a
    b_g: ad.Tensor       # d_a
    w_a: ad.Tensor       # d_a x 1
    b_a: ad.Tensor       # scalar

    @classmethod
    def init(cls, d_h, d_a, rng: np.random.Generator, name="attention"):
        limit = np.sqrt(6.0 / (d_h + d_a))
        return cls(
            w_g=ad.Tensor(rng.uniform(-limit, limit, (d_h, d_a)),
                          requires_grad=True, name=f"{name}.w_g"),
            w_g_prime=ad.Tensor(rng.uniform(-limit, limit, (d_h, d_a)),
                                requires_grad=True, name=f"{name}.w_g_prime"),
            b_g=ad.Tensor(np.zeros(d_a), requires_grad=True, name=f"{name}.b_g"),
            w_a=ad.Tensor(rng.uniform(-limit, limit, (d_a, 1)),
                          requires_grad=True, name=f"{name}.w_a"),
            b_a=ad.Tensor(np.zeros(1), requires_grad=True, name=f"{name}.b_a"),
        )

    def tensors(self):
        return [self.w_g, self.w_g_prime, self.b_g, self.w_a, self.b_a]


@dataclass
class AttentionMatrix:
    """n x n pairwise scores attached to a prediction for inspection."""

    matrix: np.ndarray
    tokens: list | None = None


def attend_batch(params: AttentionParams, states: ad.Tensor, batch: int,
                 length: int, mask: np.ndarray | None):
    """Batched attention over batch-major (batch*length) x d_h states.

    Returns (scores, focused) where scores is a (batch, length, length)
    tensor of pair weights and focused is (batch*length) x d_h.
    """
    d_h = states.shape[1]
    if params.w_g.shape[0] != d_h:
        raise ShapeError(
            f"attention expects width {params.w_g.shape[0]}, states have {d_h}"
        )
    d_a = params.w_g.shape[1]
    u = ad.matmul(states, params.w_g)          # (B*n) x d_a
    v = ad.matmul(states, params.w_g_prime)    # (B*n) x d_a
    pair = ad.add(
        ad.add(ad.reshape(u, (batch, length, 1, d_a)),
               ad.reshape(v, (batch, 1, length, d_a))),
        params.b_g,
    )
    g = ad.tanh(pair)
    raw = ad.add(ad.matmul(ad.reshape(g, (batch * length * length, d_a)),
                           params.w_a),
                 params.b_a)
    scores = ad.sigmoid(ad.reshape(raw, (batch, length, length)))
    if mask is not None:
        m = mask.astype(scores.data.dtype)
        outer = m[:, :, None] * m[:, None, :]
        scores = ad.mul(scores, ad.Tensor(outer))
    states_3d = ad.reshape(states, (batch, length, d_h))
    focused = ad.reshape(ad.matmul(scores, states_3d), (batch * length, d_h))
    return scores, focused


def attend(params: AttentionParams, hidden, mask=None, tokens=None):
    """Single-sequence attention: (n x d_h) -> (AttentionMatrix, n x d_h)."""
    hidden = hidden if isinstance(hidden, ad.Tensor) else ad.Tensor(hidden)
    n = hidden.shape[0]
    m = None if mask is None else np.asarray(mask, dtype=float).reshape(1, n)
    scores, focused = attend_batch(params, hidden, batch=1, length=n, mask=m)
    matrix = AttentionMatrix(matrix=scores.data[0].copy(), tokens=tokens)
    return matrix, focused


def export_heatmap(attn: AttentionMatrix, tokens, path):
    """Write the pair-score matrix as CSV plus a JSON twin.

    `path` is the extension-less base; returns (csv_path, json_path).
    Values are written with full precision so they round-trip.
    """
    matrix = np.asarray(attn.matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ContractError(f"attention matrix must be square, got {matrix.shape}")
    if len(tokens) != matrix.shape[0]:
        raise ContractError(
            f"{len(tokens)} tokens for a {matrix.shape[0]}-row matrix"
        )
    csv_path = f"{path}.csv"
    json_path = f"{path}.json"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + list(tokens))
        for token, row in zip(tokens, matrix):
            writer.writerow([token] + [repr(float(x)) for x in row])
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"version": "v1", "tokens": list(tokens),
                   "matrix": [[float(x) for x in row] for row in matrix]},
                  fh, sort_keys=True)
    return csv_path, json_path
