"""LSTM cell and bidirectional encoder producing per-token hidden states.

The cell is the standard four-gate formulation: with z = [x_t, h_{t-1}],

    i = sigmoid(z W_i + b_i)      f = sigmoid(z W_f + b_f)
    g = tanh(z W_g + b_g)         o = sigmoid(z W_o + b_o)
    c_t = f * c_{t-1} + i * g     h_t = o * tanh(c_t)

Gate weights are stored fused as one (d+H) x 4H matrix in i, f, g, o
order. The forget-gate bias starts at 1.0. Masked (padding) steps copy
the previous hidden and cell state forward unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError


@dataclass
class LSTMParams:
    weights: ad.Tensor  # (input_dim + hidden) x 4*hidden
    bias: ad.Tensor     # 4*hidden
    input_dim: int
    hidden: int

    @classmethod
    def init(cls, input_dim, hidden, rng: np.random.Generator, name=""):
        limit = np.sqrt(6.0 / (input_dim + hidden + hidden))
        w = rng.uniform(-limit, limit, size=(input_dim + hidden, 4 * hidden))
        b = np.zeros(4 * hidden)
        b[hidden:2 * hidden] = 1.0  # forget gate
        return cls(
            weights=ad.Tensor(w, requires_grad=True, name=f"{name}.weights"),
            bias=ad.Tensor(b, requires_grad=True, name=f"{name}.bias"),
            input_dim=input_dim,
            hidden=hidden,
        )

    def tensors(self):
        return [self.weights, self.bias]


@dataclass
class BiLSTMOutput:
    """Per-token forward+backward states; masked positions are zero."""

    states: ad.Tensor       # n x 2H
    mask: np.ndarray        # n, 1.0 for real tokens


def _step(params: LSTMParams, x_t: ad.Tensor, h_prev, c_prev, m_col):
    """One LSTM step over a batch; m_col is the (B, 1) validity column."""
    H = params.hidden
    z = ad.concat([x_t, h_prev], axis=1)
    gates = ad.add(ad.matmul(z, params.weights), params.bias)
    i = ad.sigmoid(ad.cols(gates, 0, H))
    f = ad.sigmoid(ad.cols(gates, H, 2 * H))
    g = ad.tanh(ad.cols(gates, 2 * H, 3 * H))
    o = ad.sigmoid(ad.cols(gates, 3 * H, 4 * H))
    c_cand = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_cand = ad.mul(o, ad.tanh(c_cand))
    if m_col is None:
        return h_cand, c_cand
    keep = ad.Tensor(m_col)
    drop = ad.Tensor(1.0 - m_col)
    c_new = ad.add(ad.mul(c_cand, keep), ad.mul(c_prev, drop))
    h_new = ad.add(ad.mul(h_cand, keep), ad.mul(h_prev, drop))
    return h_new, c_new


def lstm_states_batch(params: LSTMParams, x_flat: ad.Tensor, batch: int,
                      length: int, mask: np.ndarray | None, reverse=False):
    """Run the recurrence over a padded batch.

    x_flat is (batch*length) x d, batch-major (sample i occupies rows
    i*length .. i*length+length-1). Returns a list of length `length`
    whose entry t is the (batch x H) hidden state at position t.
    """
    if x_flat.shape[1] != params.input_dim:
        raise ShapeError(
            f"input dim {x_flat.shape[1]} != LSTM input dim {params.input_dim}"
        )
    H = params.hidden
    h = ad.Tensor(np.zeros((batch, H)))
    c = ad.Tensor(np.zeros((batch, H)))
    base = np.arange(batch, dtype=np.intp) * length
    order = range(length - 1, -1, -1) if reverse else range(length)
    out = [None] * length
    for t in order:
        x_t = ad.rows(x_flat, base + t)
        m_col = None
        if mask is not None:
            m_col = mask[:, t].astype(x_flat.data.dtype).reshape(batch, 1)
        h, c = _step(params, x_t, h, c, m_col)
        out[t] = h
    return out


def lstm_forward(params: LSTMParams, inputs, mask=None) -> ad.Tensor:
    """Single-sequence forward recurrence: (n x d) -> (n x H)."""
    inputs = inputs if isinstance(inputs, ad.Tensor) else ad.Tensor(inputs)
    n = inputs.shape[0]
    m = None if mask is None else np.asarray(mask, dtype=float).reshape(1, n)
    states = lstm_states_batch(params, inputs, batch=1, length=n, mask=m)
    return ad.concat(states, axis=0)


def bilstm_states_batch(fwd: LSTMParams, bwd: LSTMParams, x_flat: ad.Tensor,
                        batch: int, length: int, mask: np.ndarray | None,
                        apply_sigmoid=True) -> ad.Tensor:
    """Batched bidirectional encoding -> (batch*length) x 2H, batch-major.

    Rows at masked positions are zeroed so downstream sums ignore them.
    """
    h_fwd = lstm_states_batch(fwd, x_flat, batch, length, mask)
    h_bwd = lstm_states_batch(bwd, x_flat, batch, length, mask, reverse=True)
    per_pos = [ad.concat([h_fwd[t], h_bwd[t]], axis=1) for t in range(length)]
    stacked = ad.concat(per_pos, axis=0)  # position-major (length*batch) x 2H
    i_idx = np.repeat(np.arange(batch, dtype=np.intp), length)
    t_idx = np.tile(np.arange(length, dtype=np.intp), batch)
    states = ad.rows(stacked, t_idx * batch + i_idx)  # batch-major
    if apply_sigmoid:
        states = ad.sigmoid(states)
    if mask is not None:
        flat_mask = mask.astype(states.data.dtype).reshape(-1, 1)
        states = ad.mul(states, ad.Tensor(flat_mask))
    return states


def bilstm_encode(fwd: LSTMParams, bwd: LSTMParams, inputs, mask=None,
                  apply_sigmoid=True) -> BiLSTMOutput:
    """Single-sequence bidirectional encoding: (n x d) -> (n x 2H)."""
    if fwd.hidden != bwd.hidden:
        raise ShapeError(
            f"forward hidden {fwd.hidden} != backward hidden {bwd.hidden}"
        )
    inputs = inputs if isinstance(inputs, ad.Tensor) else ad.Tensor(inputs)
    n = inputs.shape[0]
    m = np.ones(n) if mask is None else np.asarray(mask, dtype=float)
    states = bilstm_states_batch(fwd, bwd, inputs, batch=1, length=n,
                                 mask=m.reshape(1, n),
                                 apply_sigmoid=apply_sigmoid)
    return BiLSTMOutput(states=states, mask=m)
