"""Pool-based active learning with a committee of dropout epochs.

Each round trains the current model for E epochs on the labeled set L;
because dropout perturbs every epoch, the per-epoch snapshots act as a
committee of hypotheses. Pool predictions are recorded before the round
(epoch 0) and after every epoch, so a round yields E+1 snapshots and the
tag-flip score sums disagreements over E successive pairs. Query
strategies:

  TF     rank by total tag flips across successive snapshots (desc)
  LC     rank by 1 - probability of the best tag path (desc)
  random seeded random scores

Ties break toward the lower sample id. A round is transactional: if the
oracle fails, model, optimizer, and state are restored untouched.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import crf as crf_mod
from . import trainer as trainer_mod
from .errors import ConfigError, ContractError, OracleError
from .schemes import LabeledSample, extract_spans

STRATEGIES = ("TF", "LC", "random")


@dataclass
class ALConfig:
    strategy: str = "TF"
    initial_labeled: int = 50
    query_batch: int = 20
    rounds: int = 20
    committee_epochs: int = 5
    stop_threshold: float | None = None
    reinitialize_each_round: bool = False
    normalize_flips_by_length: bool = False

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.query_batch < 1:
            raise ConfigError("query_batch must be >= 1")
        if self.committee_epochs < 2:
            raise ConfigError("committee needs at least 2 epochs")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        return self

    def to_json(self):
        return {
            "strategy": self.strategy,
            "initial_labeled": self.initial_labeled,
            "query_batch": self.query_batch,
            "rounds": self.rounds,
            "committee_epochs": self.committee_epochs,
            "stop_threshold": self.stop_threshold,
            "reinitialize_each_round": self.reinitialize_each_round,
            "normalize_flips_by_length": self.normalize_flips_by_length,
        }

    @classmethod
    def from_json(cls, obj):
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class FlipRecord:
    """Predicted tag sequences for one sample across committee epochs."""

    sample_id: str
    snapshots: list = field(default_factory=list)  # each: list of tag indices

    def add(self, tags):
        self.snapshots.append(list(tags))

    @property
    def flip_count(self) -> int:
        count = 0
        for prev, cur in zip(self.snapshots, self.snapshots[1:]):
            count += sum(1 for a, b in zip(prev, cur) if a != b)
        return count


def q_tf(record: FlipRecord) -> int:
    """Total tag flips between successive committee snapshots."""
    if len(record.snapshots) < 2:
        raise ContractError("tag flips need at least two epochs of predictions")
    return record.flip_count


def q_lc(model, sample) -> float:
    """1 - probability of the model's best tag path.

    For the softmax-only variant the sequence probability is approximated
    by the product of per-token maxima (tags are scored independently
    there, so this is exact for the path but ignores tag coupling).
    """
    scores = trainer_mod.forward_tag_scores(model, sample)
    if model.config.variant == "bilstm":
        probs = scores["probabilities"]
        return 1.0 - float(np.prod(probs.max(axis=1)))
    emissions = scores["emissions"]
    path, _ = crf_mod.viterbi(model.crf, emissions)
    return 1.0 - crf_mod.sequence_probability(model.crf, emissions, path)


def simulated_oracle(gold_store: dict):
    """Oracle answering queries from stored gold tag sequences."""

    def oracle(sample_ids):
        answers = {}
        for sample_id in sample_ids:
            if sample_id not in gold_store:
                raise ContractError(f"no gold labels for sample {sample_id!r}")
            answers[sample_id] = list(gold_store[sample_id])
        return answers

    return oracle


@dataclass
class ActiveLearningState:
    labeled_ids: list
    unlabeled_ids: list
    labels: dict = field(default_factory=dict)   # id -> exact tag names
    history: list = field(default_factory=list)  # one record per round

    def check_conservation(self, universe):
        ids = set(self.labeled_ids) | set(self.unlabeled_ids)
        assert not (set(self.labeled_ids) & set(self.unlabeled_ids))
        assert ids == set(universe)


class ActiveRun:
    """One active-learning session over a fixed pool.

    Samples passed in carry gold spans only when a simulation needs them;
    the run itself never reads gold outside oracle answers. The session
    seed drives initial-set choice, model init, dropout, shuffling, and
    random-strategy scores.
    """

    def __init__(self, pool_samples, model_config: trainer_mod.ModelConfig,
                 al_config: ALConfig, seed=0, eval_samples=None,
                 initial_labeled_ids=None):
        al_config.validate()
        model_config.validate()
        self.samples = {s.id: s for s in pool_samples}
        if len(self.samples) != len(pool_samples):
            raise ContractError("duplicate sample ids in pool")
        self.al_config = al_config
        self.eval_samples = list(eval_samples) if eval_samples else None
        root = np.random.default_rng(seed)
        self._init_rng, self._train_rng, self._strategy_rng = root.spawn(3)

        all_ids = sorted(self.samples)
        if initial_labeled_ids is None:
            k = min(al_config.initial_labeled, len(all_ids))
            picked = self._init_rng.permutation(len(all_ids))[:k]
            initial_labeled_ids = sorted(all_ids[i] for i in picked)
        labeled = list(initial_labeled_ids)
        unlabeled = sorted(set(all_ids) - set(labeled))
        self.state = ActiveLearningState(labeled_ids=labeled,
                                         unlabeled_ids=unlabeled)

        # the pool's text is visible even while its labels are not
        vocab = trainer_mod.emb_mod.build_vocabulary(
            [s.tokens for s in pool_samples],
            min_count=model_config.min_count,
            lowercase=model_config.lowercase)
        if not model_config.attributes:
            raise ConfigError("model config must name the attributes")
        self.model_config = model_config
        self.model = trainer_mod.Model(model_config, vocab, self._init_rng)
        self.optimizer = ad.Adam(self.model.parameter_tensors(),
                                 lr=model_config.learning_rate,
                                 clip_norm=model_config.grad_clip_norm)
        # initial labels are the gold tags of the seed set
        scheme = self.model.scheme
        for sample_id in labeled:
            self.state.labels[sample_id] = self.samples[sample_id].tags(scheme)

    # -- helpers -----------------------------------------------------------

    def labeled_samples(self):
        return [self._labeled_sample(i) for i in self.state.labeled_ids]

    def _labeled_sample(self, sample_id) -> LabeledSample:
        """Training view of a labeled sample, built from its stored tags."""
        tags = self.state.labels[sample_id]
        tokens = self.samples[sample_id].tokens
        scheme = self.model.scheme
        spans = {}
        for attr, start, end in extract_spans(tags, scheme):
            spans.setdefault(attr, []).append((start, end))
        for attr in scheme.attributes:
            spans.setdefault(attr, [])
        return LabeledSample(id=sample_id, tokens=tokens, spans=spans)

    def _pool(self):
        return [self.samples[i] for i in self.state.unlabeled_ids]

    def _reinitialize(self):
        self.model = trainer_mod.Model(self.model_config, self.model.vocab,
                                       self._init_rng)
        self.optimizer = ad.Adam(self.model.parameter_tensors(),
                                 lr=self.model_config.learning_rate,
                                 clip_norm=self.model_config.grad_clip_norm)

    def _snapshot(self):
        return {
            "arrays": {k: v.copy() for k, v in self.model.named_arrays().items()},
            "opt": (self.optimizer.t,
                    [m.copy() for m in self.optimizer._m],
                    [v.copy() for v in self.optimizer._v]),
            "rngs": (copy.deepcopy(self._train_rng.bit_generator.state),
                     copy.deepcopy(self._strategy_rng.bit_generator.state)),
            "state": copy.deepcopy(self.state),
        }

    def _restore(self, snap):
        self.model.load_arrays(snap["arrays"])
        self.optimizer.t, ms, vs = snap["opt"]
        for dst, src in zip(self.optimizer._m, ms):
            dst[:] = src
        for dst, src in zip(self.optimizer._v, vs):
            dst[:] = src
        self._train_rng.bit_generator.state = snap["rngs"][0]
        self._strategy_rng.bit_generator.state = snap["rngs"][1]
        self.state = snap["state"]

    # -- round phases ------------------------------------------------------

    def committee_phase(self):
        """Train E epochs on L, recording pool predictions per epoch.

        Returns (flip_records, queried_ids, strategy_scores).
        """
        if not self.state.unlabeled_ids:
            raise ContractError("unlabeled pool is empty")
        cfg = self.al_config
        if cfg.reinitialize_each_round:
            self._reinitialize()
        pool = self._pool()
        records = {s.id: FlipRecord(sample_id=s.id) for s in pool}
        for sample_id, tags in trainer_mod.predict_tags(self.model, pool).items():
            records[sample_id].add(tags)

        def after_epoch(_epoch, model):
            for sample_id, tags in trainer_mod.predict_tags(model, pool).items():
                records[sample_id].add(tags)

        trainer_mod.run_epochs(
            self.model, self.optimizer, self.labeled_samples(),
            eval_samples=[], epochs=cfg.committee_epochs,
            rng=self._train_rng, history=trainer_mod.MetricHistory(),
            epoch_callback=after_epoch)

        scores = self._strategy_scores(records, pool)
        order = sorted(scores, key=lambda i: (-scores[i], i))
        queried = order[:cfg.query_batch]
        return records, queried, scores

    def _strategy_scores(self, records, pool):
        cfg = self.al_config
        if cfg.strategy == "TF":
            scores = {}
            for sample in pool:
                flips = float(q_tf(records[sample.id]))
                if cfg.normalize_flips_by_length:
                    flips /= max(1, len(sample.tokens))
                scores[sample.id] = flips
            return scores
        if cfg.strategy == "LC":
            return {s.id: q_lc(self.model, s) for s in pool}
        return {s.id: float(self._strategy_rng.random()) for s in pool}

    def apply_labels(self, queried, answers, scores=None):
        """Move queried samples into L with their oracle tags; evaluate."""
        scheme = self.model.scheme
        valid = set(scheme.tags)
        for sample_id in queried:
            if sample_id not in answers:
                raise OracleError(f"oracle returned no labels for {sample_id!r}")
            tags = list(answers[sample_id])
            tokens = self.samples[sample_id].tokens
            if len(tags) != len(tokens):
                raise OracleError(
                    f"{sample_id!r}: {len(tags)} tags for {len(tokens)} tokens")
            bad = next((t for t in tags if t not in valid), None)
            if bad is not None:
                raise OracleError(f"{sample_id!r}: tag {bad!r} not in scheme")
            if sample_id in self.state.labels and sample_id in self.state.labeled_ids:
                raise ContractError(f"{sample_id!r} is already labeled")
            self.state.labels[sample_id] = tags
        self.state.labeled_ids = sorted(self.state.labeled_ids + list(queried))
        remaining = set(self.state.unlabeled_ids) - set(queried)
        self.state.unlabeled_ids = sorted(remaining)

        metrics = None
        if self.eval_samples:
            report = trainer_mod.evaluate_model(self.model, self.eval_samples)
            metrics = {"precision": report.micro.precision,
                       "recall": report.micro.recall,
                       "f1": report.micro.f1,
                       "loss": dataset_loss(self.model, self.eval_samples)}
        self.state.history.append({
            "round": len(self.state.history),
            "queried_ids": list(queried),
            "strategy_scores": {i: scores.get(i) for i in queried} if scores else {},
            "post_round_metrics": metrics,
            "labeled_count": len(self.state.labeled_ids),
            # size of L the committee model was trained on this round
            "trained_on": len(self.state.labeled_ids) - len(queried),
        })
        return metrics

    def should_stop(self) -> bool:
        cfg = self.al_config
        if len(self.state.history) >= cfg.rounds:
            return True
        if not self.state.unlabeled_ids:
            return True
        if cfg.stop_threshold is not None and len(self.state.history) >= 2:
            last = self.state.history[-1]["post_round_metrics"]
            prev = self.state.history[-2]["post_round_metrics"]
            if last and prev:
                if abs(last["loss"] - prev["loss"]) < cfg.stop_threshold:
                    return True
        return False


def dataset_loss(model, samples) -> float:
    """Mean per-sequence loss without dropout (validation loss)."""
    total, count = 0.0, 0
    step = max(1, model.config.batch_size)
    for lo in range(0, len(samples), step):
        chunk = samples[lo:lo + step]
        indices, mask, tags = trainer_mod._pad_batch(
            chunk, model.vocab, model.scheme)
        out = model.forward_batch(indices, mask)
        B, n = indices.shape
        if model.config.variant == "bilstm":
            scores = out["scores"].data.reshape(B, n, model.num_tags)
            shifted = scores - scores.max(axis=2, keepdims=True)
            logp = shifted - np.log(np.exp(shifted).sum(axis=2, keepdims=True))
            picked = np.take_along_axis(logp, tags[:, :, None], axis=2)[:, :, 0]
            total += float(-(picked * mask).sum() / max(1, mask.sum()) * B)
        else:
            loss = crf_mod.nll_batch(model.crf, out["scores"], B, n, tags, mask)
            total += float(loss.data) * B
        count += B
    return total / max(count, 1)


def run_round(run: ActiveRun, oracle):
    """One full Algorithm-style round; transactional against oracle failure."""
    snap = run._snapshot()
    try:
        records, queried, scores = run.committee_phase()
        answers = oracle(queried)
        run.apply_labels(queried, answers, scores)
    except Exception:
        run._restore(snap)
        raise
    return run.state


def run_simulation(pool_samples, eval_samples, model_config, al_config,
                   seed=0) -> ActiveRun:
    """Drive rounds against the simulated gold oracle until the budget ends."""
    run = ActiveRun(pool_samples, model_config, al_config, seed=seed,
                    eval_samples=eval_samples)
    scheme = run.model.scheme
    gold = {s.id: s.tags(scheme) for s in pool_samples}
    oracle = simulated_oracle(gold)
    while not run.should_stop():
        run_round(run, oracle)
    return run
