"""Linear-chain CRF: emission projection, exact log-partition, sequence
log-likelihood, Viterbi decoding, and path-probability scoring.

Tags are indices 0..K-1; two virtual states START=K and STOP=K+1 pad the
transition matrix. Transitions into START and out of STOP are excluded
from every dynamic program by construction, so they never need a -inf
entry and the stored matrix stays fully finite and learnable. Masks mark
trailing padding: masked positions are ignored by all algorithms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError, NumericError

FORBIDDEN_SCORE = -1.0e4  # additive penalty standing in for -inf


@dataclass
class CRFParams:
    w_e: ad.Tensor          # d_in x K emission projection
    b_e: ad.Tensor          # K
    transitions: ad.Tensor  # (K+2) x (K+2), START=K, STOP=K+1
    num_tags: int
    constraint_penalty: np.ndarray | None = None  # (K+2) x (K+2) additive

    @classmethod
    def init(cls, d_in, num_tags, rng: np.random.Generator, name="crf",
             constraint_penalty=None):
        limit = np.sqrt(6.0 / (d_in + num_tags))
        w = rng.uniform(-limit, limit, (d_in, num_tags))
        t = rng.uniform(-0.1, 0.1, (num_tags + 2, num_tags + 2))
        return cls(
            w_e=ad.Tensor(w, requires_grad=True, name=f"{name}.w_e"),
            b_e=ad.Tensor(np.zeros(num_tags), requires_grad=True, name=f"{name}.b_e"),
            transitions=ad.Tensor(t, requires_grad=True, name=f"{name}.transitions"),
            num_tags=num_tags,
            constraint_penalty=constraint_penalty,
        )

    @property
    def start(self):
        return self.num_tags

    @property
    def stop(self):
        return self.num_tags + 1

    def tensors(self):
        return [self.w_e, self.b_e, self.transitions]

    def effective_transitions(self) -> ad.Tensor:
        if self.constraint_penalty is None:
            return self.transitions
        return ad.add(self.transitions, ad.Tensor(self.constraint_penalty))


def emissions(params: CRFParams, features) -> ad.Tensor:
    """Project features (m x d_in) to per-tag scores (m x K)."""
    features = features if isinstance(features, ad.Tensor) else ad.Tensor(features)
    return ad.add(ad.matmul(features, params.w_e), params.b_e)


def _tag_blocks(params: CRFParams):
    """Split the padded transition matrix into the pieces the DPs read."""
    K = params.num_tags
    trans = params.effective_transitions()
    block = ad.cols(ad.rows(trans, np.arange(K)), 0, K)            # K x K
    start_row = ad.cols(ad.rows(trans, np.array([params.start])), 0, K)  # 1 x K
    stop_col = ad.reshape(
        ad.rows(ad.cols(trans, params.stop, params.stop + 1), np.arange(K)),
        (1, K),
    )
    return block, start_row, stop_col


def _as_emission_tensor(emission_scores):
    if isinstance(emission_scores, ad.Tensor):
        return emission_scores
    return ad.Tensor(np.asarray(emission_scores, dtype=float))


def _valid_length(n, mask):
    if mask is None:
        return n
    m = np.asarray(mask, dtype=bool).ravel()
    length = int(m.sum())
    if length and not m[:length].all():
        raise ContractError("mask must cover a contiguous prefix")
    return length


# ---------------------------------------------------------------------------
# batched log-domain programs (flat batch-major emissions)


def log_partition_batch(params: CRFParams, emission_flat: ad.Tensor,
                        batch: int, length: int,
                        mask: np.ndarray | None) -> ad.Tensor:
    """Forward algorithm over a padded batch -> (batch,) logZ tensor."""
    K = params.num_tags
    block, start_row, stop_col = _tag_blocks(params)
    base = np.arange(batch, dtype=np.intp) * length
    alpha = ad.add(start_row, ad.rows(emission_flat, base))  # B x K
    for t in range(1, length):
        prev = ad.reshape(alpha, (batch, K, 1))
        scores = ad.add(prev, ad.reshape(block, (1, K, K)))
        new = ad.add(ad.logsumexp(scores, axis=1), ad.rows(emission_flat, base + t))
        if mask is not None:
            m_col = mask[:, t].astype(float).reshape(batch, 1)
            alpha = ad.add(ad.mul(new, ad.Tensor(m_col)),
                           ad.mul(alpha, ad.Tensor(1.0 - m_col)))
        else:
            alpha = new
    return ad.logsumexp(ad.add(alpha, stop_col), axis=1)  # (batch,)


def _bigram_counts(params: CRFParams, tags: np.ndarray,
                   mask: np.ndarray | None) -> np.ndarray:
    """Per-sample transition-usage counts over the padded (K+2)^2 matrix."""
    K2 = params.num_tags + 2
    batch, length = tags.shape
    counts = np.zeros((batch, K2 * K2))
    for b in range(batch):
        prev = params.start
        for t in range(length):
            if mask is not None and not mask[b, t]:
                break
            cur = int(tags[b, t])
            counts[b, prev * K2 + cur] += 1.0
            prev = cur
        counts[b, prev * K2 + params.stop] += 1.0
    return counts


def score_batch(params: CRFParams, emission_flat: ad.Tensor, batch: int,
                length: int, tags: np.ndarray,
                mask: np.ndarray | None) -> ad.Tensor:
    """Log-potential of the gold paths -> (batch,) tensor."""
    K = params.num_tags
    tags = np.asarray(tags, dtype=np.intp)
    valid = np.ones_like(tags, dtype=bool) if mask is None else mask.astype(bool)
    seen = tags[valid]
    if seen.size and (seen.min() < 0 or seen.max() >= K):
        raise ContractError(f"tag index out of range 0..{K - 1}")
    tags = np.where(valid, tags, 0)
    onehot = np.zeros((batch * length, K))
    onehot[np.arange(batch * length), tags.ravel()] = 1.0
    onehot *= valid.astype(float).reshape(-1, 1)
    gold = ad.tsum(
        ad.reshape(ad.tsum(ad.mul(emission_flat, ad.Tensor(onehot)), axis=1),
                   (batch, length)),
        axis=1,
    )
    counts = _bigram_counts(params, tags, mask)
    trans_flat = ad.reshape(params.effective_transitions(), (1, counts.shape[1]))
    trans_score = ad.tsum(ad.mul(ad.Tensor(counts), trans_flat), axis=1)
    return ad.add(gold, trans_score)


def nll_batch(params: CRFParams, emission_flat: ad.Tensor, batch: int,
              length: int, tags: np.ndarray,
              mask: np.ndarray | None) -> ad.Tensor:
    """Mean negative log-likelihood over the batch (scalar tensor)."""
    logz = log_partition_batch(params, emission_flat, batch, length, mask)
    gold = score_batch(params, emission_flat, batch, length, tags, mask)
    return ad.scale(ad.tsum(ad.add(logz, ad.scale(gold, -1.0))), 1.0 / batch)


# ---------------------------------------------------------------------------
# single-sequence interface


def score_sequence(params: CRFParams, emission_scores, tags, mask=None) -> ad.Tensor:
    """Sum of transition and emission scores along one tag path."""
    e = _as_emission_tensor(emission_scores)
    total = e.shape[0]
    n = _valid_length(total, mask)
    given = np.asarray(tags, dtype=np.intp).ravel()
    if given.size < n:
        raise ContractError(f"{given.size} tags for {n} unmasked positions")
    padded = np.zeros((1, total), dtype=np.intp)
    padded[0, :n] = given[:n]
    out = score_batch(params, e, 1, total, padded, _prefix_mask(total, n))
    return ad.reshape(out, ())


def log_partition(params: CRFParams, emission_scores, mask=None) -> ad.Tensor:
    """Log of the sum of exp path scores over all K^n tag paths."""
    e = _as_emission_tensor(emission_scores)
    n = _valid_length(e.shape[0], mask)
    if n < 1:
        raise ContractError("log_partition needs at least one unmasked position")
    out = log_partition_batch(params, e, 1, e.shape[0], _prefix_mask(e.shape[0], n))
    return ad.reshape(out, ())


def nll(params: CRFParams, emission_scores, tags, mask=None) -> ad.Tensor:
    """Negative log-likelihood of one tagged sequence."""
    logz = log_partition(params, emission_scores, mask)
    gold = score_sequence(params, emission_scores, tags, mask)
    return ad.add(logz, ad.scale(gold, -1.0))


def _prefix_mask(length, valid):
    m = np.zeros((1, length), dtype=bool)
    m[0, :valid] = True
    return m


def viterbi(params: CRFParams, emission_scores, mask=None):
    """Exact best path and its log-potential; ties break to lower index."""
    e = np.asarray(
        emission_scores.data if isinstance(emission_scores, ad.Tensor)
        else emission_scores, dtype=float)
    n = _valid_length(e.shape[0], mask)
    if n < 1:
        raise ContractError("viterbi needs at least one unmasked position")
    K = params.num_tags
    trans = params.transitions.data
    if params.constraint_penalty is not None:
        trans = trans + params.constraint_penalty
    block = trans[:K, :K]
    delta = trans[params.start, :K] + e[0]
    backptr = np.empty((n, K), dtype=np.intp)
    for t in range(1, n):
        scores = delta[:, None] + block  # prev x cur
        backptr[t] = scores.argmax(axis=0)
        delta = scores.max(axis=0) + e[t]
    final = delta + trans[:K, params.stop]
    last = int(final.argmax())
    path = [last]
    for t in range(n - 1, 0, -1):
        path.append(int(backptr[t, path[-1]]))
    path.reverse()
    return path, float(final[last])


def sequence_probability(params: CRFParams, emission_scores, tags,
                         mask=None) -> float:
    """exp(path score - logZ), clamped to [0, 1] against float rounding."""
    score = float(score_sequence(params, emission_scores, tags, mask).data)
    logz = float(log_partition(params, emission_scores, mask).data)
    p = float(np.exp(score - logz))
    if p > 1.0:
        if p > 1.0 + 1e-12:
            raise NumericError(f"path probability {p} exceeds 1 beyond rounding")
        p = 1.0
    return p
