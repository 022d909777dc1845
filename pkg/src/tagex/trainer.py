"""Model assembly, training loop, prediction, and checkpointing.

Three variants share one forward pass:
  - "bilstm": per-token softmax over tags from the encoder states;
  - "bilstm-crf": a tanh dense layer re-weighs the encoder states, then a
    linear-chain CRF scores tag sequences;
  - "opentag": pairwise self-attention replaces the dense layer and its
    focused states feed the CRF; predictions also carry the attention
    matrix for inspection.

All randomness (parameter init, dropout masks, epoch shuffling) flows
from the single config seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import attention as attn_mod
from . import autodiff as ad
from . import crf as crf_mod
from . import embeddings as emb_mod
from . import recurrent as rec_mod
from .corpus import tokenize
from .errors import ConfigError, ContractError, NumericError, TrainingDiverged
from .schemes import TagScheme, decode_tags, evaluate, transition_penalty

VARIANTS = ("bilstm", "bilstm-crf", "opentag")

CHECKPOINT_META_VERSION = "tagex-checkpoint-v1"


@dataclass
class ModelConfig:
    variant: str = "opentag"
    scheme_kind: str = "BIOE"
    attributes: tuple = ()
    embed_dim: int = 100
    hidden: int = 100
    attention_dim: int = 200
    dropout: float = 0.4
    batch_size: int = 32
    epochs: int = 500
    last_k_average: int = 20
    seed: int = 0
    learning_rate: float = 0.001
    min_count: int = 1
    lowercase: bool = True
    bilstm_sigmoid_concat: bool = False
    attention_concat_variant: bool = False
    crf_hard_constraints: bool = False
    bare_b_is_value: bool = True
    grad_clip_norm: float | None = None
    pretrained_path: str | None = None

    def __post_init__(self):
        if isinstance(self.attributes, list):
            self.attributes = tuple(self.attributes)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}")
        for name in ("embed_dim", "hidden", "attention_dim", "batch_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must be in [0, 1)")
        if self.epochs < 0 or self.last_k_average < 0:
            raise ConfigError("epochs and last_k_average must be >= 0")
        if self.epochs and self.last_k_average > self.epochs:
            raise ConfigError("last_k_average cannot exceed epochs")
        return self

    def scheme(self) -> TagScheme:
        return TagScheme(self.scheme_kind, self.attributes)

    def to_json(self):
        out = asdict(self)
        out["attributes"] = list(self.attributes)
        return out

    @classmethod
    def from_json(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    precision: float
    recall: float
    f1: float

    def to_record(self):
        return {"epoch": self.epoch, "loss": self.loss,
                "precision": self.precision, "recall": self.recall,
                "f1": self.f1}


@dataclass
class MetricHistory:
    records: list = field(default_factory=list)

    def append(self, m: EpochMetrics):
        self.records.append(m)

    def __len__(self):
        return len(self.records)

    def last_k(self, k):
        """Average loss/P/R/F over the final k epochs."""
        if not self.records:
            return {"loss": 0.0, "precision": 0.0, "recall": 0.0, "f1": 0.0}
        tail = self.records[-k:] if k else self.records
        return {
            "loss": float(np.mean([m.loss for m in tail])),
            "precision": float(np.mean([m.precision for m in tail])),
            "recall": float(np.mean([m.recall for m in tail])),
            "f1": float(np.mean([m.f1 for m in tail])),
        }

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for m in self.records:
                fh.write(json.dumps(m.to_record(), sort_keys=True) + "\n")

    @classmethod
    def from_jsonl(cls, path):
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    obj = json.loads(line)
                    records.append(EpochMetrics(
                        epoch=obj["epoch"], loss=obj["loss"],
                        precision=obj["precision"], recall=obj["recall"],
                        f1=obj["f1"]))
        return cls(records=records)


@dataclass
class Prediction:
    tokens: list
    tags: list                      # tag names
    extraction: dict                # attr -> set of value strings
    attention: attn_mod.AttentionMatrix | None = None


class Model:
    """Parameter bundle plus the shared forward pass for all variants."""

    def __init__(self, config: ModelConfig, vocab: emb_mod.Vocabulary,
                 rng: np.random.Generator | None = None):
        config.validate()
        if not config.attributes:
            raise ConfigError("config.attributes must name at least one attribute")
        self.config = config
        self.scheme = config.scheme()
        self.vocab = vocab
        rng = rng or np.random.default_rng(config.seed)
        K = len(self.scheme.tags)
        d, H = config.embed_dim, config.hidden
        self.embedding = emb_mod.EmbeddingTable.random_init(vocab, d, rng)
        if config.pretrained_path:
            self.embedding = emb_mod.load_pretrained(
                config.pretrained_path, vocab, d, rng)
        self.fwd = rec_mod.LSTMParams.init(d, H, rng, name="lstm_fwd")
        self.bwd = rec_mod.LSTMParams.init(d, H, rng, name="lstm_bwd")
        d_h = 2 * H
        self.attn = None
        self.nonlinear = None
        self.crf = None
        self.w_h = None
        penalty = None
        if config.crf_hard_constraints:
            penalty = transition_penalty(self.scheme, config.bare_b_is_value)
        if config.variant == "opentag":
            self.attn = attn_mod.AttentionParams.init(
                d_h, config.attention_dim, rng)
            crf_in = 2 * d_h if config.attention_concat_variant else d_h
            self.crf = crf_mod.CRFParams.init(crf_in, K, rng,
                                              constraint_penalty=penalty)
        elif config.variant == "bilstm-crf":
            limit = np.sqrt(6.0 / (d_h + d_h))
            self.nonlinear = (
                ad.Tensor(rng.uniform(-limit, limit, (d_h, d_h)),
                          requires_grad=True, name="nonlinear.weights"),
                ad.Tensor(np.zeros(d_h), requires_grad=True,
                          name="nonlinear.bias"),
            )
            self.crf = crf_mod.CRFParams.init(d_h, K, rng,
                                              constraint_penalty=penalty)
        else:  # bilstm: per-token softmax, no bias
            limit = np.sqrt(6.0 / (d_h + K))
            self.w_h = ad.Tensor(rng.uniform(-limit, limit, (d_h, K)),
                                 requires_grad=True, name="w_h")

    @property
    def num_tags(self):
        return len(self.scheme.tags)

    def parameter_tensors(self):
        out = [self.embedding.weights] + self.fwd.tensors() + self.bwd.tensors()
        if self.attn is not None:
            out += self.attn.tensors()
        if self.nonlinear is not None:
            out += list(self.nonlinear)
        if self.crf is not None:
            out += self.crf.tensors()
        if self.w_h is not None:
            out.append(self.w_h)
        return out

    def named_arrays(self):
        arrays = {"embedding": self.embedding.weights.data,
                  "lstm_fwd.weights": self.fwd.weights.data,
                  "lstm_fwd.bias": self.fwd.bias.data,
                  "lstm_bwd.weights": self.bwd.weights.data,
                  "lstm_bwd.bias": self.bwd.bias.data}
        if self.attn is not None:
            arrays.update({
                "attention.w_g": self.attn.w_g.data,
                "attention.w_g_prime": self.attn.w_g_prime.data,
                "attention.b_g": self.attn.b_g.data,
                "attention.w_a": self.attn.w_a.data,
                "attention.b_a": self.attn.b_a.data,
            })
        if self.nonlinear is not None:
            arrays["nonlinear.weights"] = self.nonlinear[0].data
            arrays["nonlinear.bias"] = self.nonlinear[1].data
        if self.crf is not None:
            arrays.update({"crf.w_e": self.crf.w_e.data,
                           "crf.b_e": self.crf.b_e.data,
                           "crf.transitions": self.crf.transitions.data})
        if self.w_h is not None:
            arrays["w_h"] = self.w_h.data
        return arrays

    def load_arrays(self, arrays):
        mine = self.named_arrays()
        if set(arrays) != set(mine):
            raise ConfigError("checkpoint parameter names do not match variant")
        for name, target in mine.items():
            src = arrays[name]
            if src.shape != target.shape:
                raise ConfigError(
                    f"checkpoint array {name} has shape {src.shape}, "
                    f"model expects {target.shape}")
            target[:] = src

    # -- forward -----------------------------------------------------------

    def forward_batch(self, indices: np.ndarray, mask: np.ndarray,
                      training=False, rng: np.random.Generator | None = None):
        """Shared forward pass over a padded (B, n) index batch.

        Returns a dict with "scores": flat (B*n, K) tensor (softmax inputs
        for bilstm, CRF emissions otherwise) and "attention": a (B, n, n)
        tensor for the attention variant.
        """
        cfg = self.config
        B, n = indices.shape
        keep = 1.0 - cfg.dropout
        embedded = emb_mod.lookup(self.embedding, indices.ravel())
        if training and cfg.dropout > 0.0:
            m = (rng.random(embedded.shape) < keep).astype(float)
            embedded = ad.dropout(embedded, m, keep)
        states = rec_mod.bilstm_states_batch(
            self.fwd, self.bwd, embedded, B, n, mask,
            apply_sigmoid=cfg.bilstm_sigmoid_concat)
        if training and cfg.dropout > 0.0:
            m = (rng.random(states.shape) < keep).astype(float)
            states = ad.dropout(states, m, keep)
        attention = None
        if cfg.variant == "opentag":
            attention, focused = attn_mod.attend_batch(
                self.attn, states, B, n, mask)
            feats = (ad.concat([states, focused], axis=1)
                     if cfg.attention_concat_variant else focused)
            scores = crf_mod.emissions(self.crf, feats)
        elif cfg.variant == "bilstm-crf":
            w, b = self.nonlinear
            feats = ad.tanh(ad.add(ad.matmul(states, w), b))
            scores = crf_mod.emissions(self.crf, feats)
        else:
            scores = ad.matmul(states, self.w_h)
        return {"scores": scores, "attention": attention}

    def batch_loss(self, indices, mask, tags, rng):
        B, n = indices.shape
        out = self.forward_batch(indices, mask, training=True, rng=rng)
        scores = out["scores"]
        if self.config.variant == "bilstm":
            flat_mask = mask.astype(float).reshape(-1, 1)
            K = self.num_tags
            onehot = np.zeros((B * n, K))
            onehot[np.arange(B * n), np.where(mask.ravel(), tags.ravel(), 0)] = 1.0
            onehot *= flat_mask
            lse = ad.logsumexp(scores, axis=1, keepdims=True)
            gold = ad.tsum(ad.mul(scores, ad.Tensor(onehot)), axis=1,
                           keepdims=True)
            ce = ad.mul(ad.add(lse, ad.scale(gold, -1.0)), ad.Tensor(flat_mask))
            return ad.scale(ce.sum(), 1.0 / max(1.0, float(mask.sum())))
        return crf_mod.nll_batch(self.crf, scores, B, n, tags, mask)


def _pad_batch(samples, vocab, scheme):
    """Index, tag, and mask matrices padded to the batch's longest sample."""
    n = max(len(s.tokens) for s in samples)
    B = len(samples)
    indices = np.zeros((B, n), dtype=np.intp)
    mask = np.zeros((B, n), dtype=bool)
    tags = np.zeros((B, n), dtype=np.intp)
    for i, sample in enumerate(samples):
        ln = len(sample.tokens)
        indices[i, :ln] = vocab.indices(sample.tokens)
        mask[i, :ln] = True
        tags[i, :ln] = [scheme.index(t) for t in sample.tags(scheme)]
    return indices, mask, tags


def _decode_batch(model: Model, samples):
    """Viterbi (or argmax) decode a list of samples -> list of tag-index lists."""
    out = []
    step = max(1, model.config.batch_size)
    for lo in range(0, len(samples), step):
        chunk = samples[lo:lo + step]
        indices, mask, _ = _pad_batch(chunk, model.vocab, model.scheme)
        B, n = indices.shape
        scores = model.forward_batch(indices, mask)["scores"].data
        scores = scores.reshape(B, n, model.num_tags)
        for i, sample in enumerate(chunk):
            ln = len(sample.tokens)
            if model.config.variant == "bilstm":
                out.append(list(scores[i, :ln].argmax(axis=1)))
            else:
                path, _ = crf_mod.viterbi(model.crf, scores[i, :ln])
                out.append(path)
    return out


def predict_tags(model: Model, samples) -> dict:
    """Map sample id -> predicted tag-index list (no decoding to values)."""
    paths = _decode_batch(model, samples)
    return {s.id: path for s, path in zip(samples, paths)}


def evaluate_model(model: Model, samples):
    """Full-credit extraction metrics of the model on labeled samples."""
    paths = _decode_batch(model, samples)
    predicted, gold = {}, {}
    for sample, path in zip(samples, paths):
        predicted[sample.id] = decode_tags(
            sample.tokens, model.scheme.names(path), model.scheme,
            model.config.bare_b_is_value)
        gold[sample.id] = sample.gold_values()
    return evaluate(predicted, gold)


def train(train_samples, config: ModelConfig, eval_samples=None):
    """Train a model; returns (model, per-epoch metric history).

    eval_samples default to the training set. Epoch metrics hold the mean
    train loss and full-credit P/R/F on the eval split.
    """
    config.validate()
    train_samples = [s for s in train_samples if s.tokens]
    if not train_samples:
        raise ContractError("training set is empty")
    eval_samples = list(eval_samples) if eval_samples is not None else list(train_samples)
    if not config.attributes:
        attrs = sorted({a for s in train_samples for a in s.spans})
        config = replace(config, attributes=tuple(attrs))
    rng = np.random.default_rng(config.seed)
    vocab = emb_mod.build_vocabulary(
        [s.tokens for s in train_samples], min_count=config.min_count,
        lowercase=config.lowercase)
    model = Model(config, vocab, rng)
    optimizer = ad.Adam(model.parameter_tensors(), lr=config.learning_rate,
                        clip_norm=config.grad_clip_norm)
    history = MetricHistory()
    run_epochs(model, optimizer, train_samples, eval_samples, config.epochs,
               rng, history)
    return model, history


def run_epochs(model: Model, optimizer: ad.Adam, train_samples, eval_samples,
               epochs, rng, history: MetricHistory,
               epoch_callback=None):
    """Run training epochs in place, appending to history.

    epoch_callback(epoch_index, model) fires after each epoch's update,
    before evaluation; used by the active-learning committee.
    """
    config = model.config
    for _ in range(epochs):
        epoch = len(history.records)
        order = list(rng.permutation(len(train_samples)))
        order.sort(key=lambda i: len(train_samples[i].tokens))  # stable
        batches = [order[lo:lo + config.batch_size]
                   for lo in range(0, len(order), config.batch_size)]
        rng.shuffle(batches)
        total_loss, total_count = 0.0, 0
        for batch_ids in batches:
            chunk = [train_samples[i] for i in batch_ids]
            indices, mask, tags = _pad_batch(chunk, model.vocab, model.scheme)
            try:
                with ad.Graph() as graph:
                    loss = model.batch_loss(indices, mask, tags, rng)
                    graph.backward(loss)
            except NumericError:
                raise TrainingDiverged(epoch)
            optimizer.step()
            optimizer.zero_grad()
            total_loss += float(loss.data) * len(chunk)
            total_count += len(chunk)
        if epoch_callback is not None:
            epoch_callback(epoch, model)
        report = evaluate_model(model, eval_samples)
        history.append(EpochMetrics(
            epoch=epoch,
            loss=total_loss / max(total_count, 1),
            precision=report.micro.precision,
            recall=report.micro.recall,
            f1=report.micro.f1,
        ))
    return history


def forward_tag_scores(model: Model, sample):
    """Per-token outputs for one sample, per variant contract.

    bilstm -> {"probabilities": (n, K)}; CRF variants -> {"emissions":
    (n, K)} plus {"attention": (n, n)} for the attention variant.
    """
    tokens = sample.tokens if hasattr(sample, "tokens") else list(sample)
    indices = model.vocab.indices(tokens).reshape(1, -1)
    mask = np.ones_like(indices, dtype=bool)
    out = model.forward_batch(indices, mask)
    scores = out["scores"].data.reshape(len(tokens), model.num_tags)
    if model.config.variant == "bilstm":
        shifted = scores - scores.max(axis=1, keepdims=True)
        ex = np.exp(shifted)
        return {"probabilities": ex / ex.sum(axis=1, keepdims=True)}
    result = {"emissions": scores}
    if out["attention"] is not None:
        result["attention"] = out["attention"].data[0].copy()
    return result


def predict(model: Model, text_or_tokens) -> Prediction:
    """Tokenize, tag, and decode one input; empty input -> empty result."""
    if isinstance(text_or_tokens, str):
        tokens = tokenize(text_or_tokens)
    else:
        tokens = [str(t).lower() if model.config.lowercase else str(t)
                  for t in text_or_tokens]
    if not tokens:
        return Prediction(tokens=[], tags=[],
                          extraction={a: set() for a in model.scheme.attributes})
    indices = model.vocab.indices(tokens).reshape(1, -1)
    mask = np.ones_like(indices, dtype=bool)
    out = model.forward_batch(indices, mask)
    scores = out["scores"].data.reshape(len(tokens), model.num_tags)
    if model.config.variant == "bilstm":
        path = list(scores.argmax(axis=1))
    else:
        path, _ = crf_mod.viterbi(model.crf, scores)
    names = model.scheme.names(path)
    extraction = decode_tags(tokens, names, model.scheme,
                             model.config.bare_b_is_value)
    attention = None
    if out["attention"] is not None:
        attention = attn_mod.AttentionMatrix(
            matrix=out["attention"].data[0].copy(), tokens=tokens)
    return Prediction(tokens=tokens, tags=names, extraction=extraction,
                      attention=attention)


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(model: Model, path):
    """Write a byte-stable single-file archive of params + config + vocab."""
    meta = {
        "version": CHECKPOINT_META_VERSION,
        "config": model.config.to_json(),
        "vocab": model.vocab.to_json(),
    }
    blob = ad.save_arrays(model.named_arrays(), meta=meta)
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        arrays, meta = ad.load_arrays(fh.read())
    if meta.get("version") != CHECKPOINT_META_VERSION:
        raise ConfigError(f"unsupported checkpoint version {meta.get('version')!r}")
    config = ModelConfig.from_json(meta["config"])
    vocab = emb_mod.Vocabulary.from_json(meta["vocab"])
    model = Model(config, vocab)
    model.load_arrays(arrays)
    return model
