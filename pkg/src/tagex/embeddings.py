"""Vocabulary management and the trainable word-embedding table.

Index 0 is PAD (always the zero vector, never updated) and index 1 is
UNK. Tokens below the frequency cutoff fall back to UNK at lookup time.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, IngestionError

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

OOV_INIT_RANGE = 0.25


class Vocabulary:
    """Bijective token <-> dense index map with PAD/UNK reserved."""

    def __init__(self, tokens, lowercase=True):
        self.lowercase = lowercase
        self._tokens = [PAD_TOKEN, UNK_TOKEN] + list(tokens)
        self._index = {tok: i for i, tok in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise ContractError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self._tokens)

    def __contains__(self, token):
        return self._fold(token) in self._index

    def _fold(self, token):
        return token.lower() if self.lowercase else token

    def index(self, token) -> int:
        return self._index.get(self._fold(token), UNK)

    def indices(self, tokens) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.intp)

    def token(self, index) -> str:
        return self._tokens[index]

    @property
    def tokens(self):
        return list(self._tokens)

    def to_json(self):
        return {"tokens": self._tokens[2:], "lowercase": self.lowercase}

    @classmethod
    def from_json(cls, obj):
        return cls(obj["tokens"], lowercase=obj["lowercase"])


def build_vocabulary(corpus, min_count=1, lowercase=True) -> Vocabulary:
    """Index every token that occurs at least min_count times in corpus."""
    counts = Counter()
    n_sequences = 0
    for sequence in corpus:
        n_sequences += 1
        for token in sequence:
            counts[token.lower() if lowercase else token] += 1
    if n_sequences == 0:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    kept = [tok for tok, c in counts.items() if c >= min_count]
    kept.sort()
    return Vocabulary(kept, lowercase=lowercase)


class EmbeddingTable:
    """|V| x d trainable matrix; row PAD stays exactly zero."""

    def __init__(self, matrix: np.ndarray, vocab: Vocabulary):
        if matrix.shape[0] != len(vocab):
            raise ContractError(
                f"embedding rows {matrix.shape[0]} != vocabulary size {len(vocab)}"
            )
        matrix = np.asarray(matrix, dtype=ad.default_dtype())
        matrix[PAD] = 0.0
        self.weights = ad.Tensor(matrix, requires_grad=True, name="embeddings")
        self.vocab = vocab

    @property
    def dim(self):
        return self.weights.shape[1]

    @classmethod
    def random_init(cls, vocab: Vocabulary, dim: int, rng: np.random.Generator):
        matrix = rng.uniform(-OOV_INIT_RANGE, OOV_INIT_RANGE, size=(len(vocab), dim))
        return cls(matrix, vocab)


def load_pretrained(path, vocab: Vocabulary, dim: int,
                    rng: np.random.Generator) -> EmbeddingTable:
    """Initialize from a whitespace-separated text vector file.

    In-vocabulary tokens found in the file take the file vector; all other
    rows (except PAD) are sampled uniformly from [-0.25, 0.25].
    """
    matrix = rng.uniform(-OOV_INIT_RANGE, OOV_INIT_RANGE, size=(len(vocab), dim))
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise ConfigError(
                    f"{path}:{lineno}: vector for {token!r} has {len(values)} "
                    f"components, config expects {dim}"
                )
            if token not in vocab:
                continue
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError as exc:
                raise IngestionError(f"unparseable float in {path}: {exc}", lineno)
            matrix[vocab.index(token)] = vec
    return EmbeddingTable(matrix, vocab)


def lookup(table: EmbeddingTable, indices) -> ad.Tensor:
    """Gather embedding rows; PAD rows come out zero and stay zero-grad."""
    idx = np.asarray(indices, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= len(table.vocab)):
        raise ContractError(
            f"embedding index out of range 0..{len(table.vocab) - 1}"
        )
    gathered = ad.rows(table.weights, idx)
    # Multiplying by the PAD mask keeps PAD outputs zero and blocks any
    # gradient from reaching the PAD row.
    mask = (idx != PAD).astype(gathered.data.dtype).reshape(-1, 1)
    return ad.mul(gathered, ad.Tensor(mask))
