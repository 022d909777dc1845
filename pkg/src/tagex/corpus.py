"""Corpus ingestion, tokenization, dataset splitting, and a synthetic
product-title generator with gold annotations.

Corpus files are UTF-8 JSON lines, one record per profile:

    {"schema": "tagex-corpus-v1", "id": ..., "field_kind": ...,
     "text": ..., "annotations": {attr: [{"value", "start", "end"}]}}

Character offsets refer to the raw text; unknown fields are ignored.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, CorpusValidationError, IngestionError
from .schemes import LabeledSample

log = logging.getLogger(__name__)

CORPUS_SCHEMA = "tagex-corpus-v1"
SYNTH_SCHEMA = "tagex-synthspec-v1"

FIELD_KINDS = ("title", "description", "bullet")

# decimals stay whole; the listed punctuation becomes its own token
_TOKEN_RE = re.compile(r"\d+\.\d+|[^\s,.()&/]+|[,.()&/]")


def tokenize_with_offsets(text):
    """Lowercased tokens plus their [start, end) character offsets."""
    tokens, offsets = [], []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(m.group().lower())
        offsets.append((m.start(), m.end()))
    return tokens, offsets


def tokenize(text):
    return tokenize_with_offsets(text)[0]


@dataclass
class Annotation:
    value: str
    start: int
    end: int


@dataclass
class ProductProfile:
    id: str
    field_kind: str
    text: str
    annotations: dict = field(default_factory=dict)  # attr -> [Annotation]

    def to_record(self):
        return {
            "schema": CORPUS_SCHEMA,
            "id": self.id,
            "field_kind": self.field_kind,
            "text": self.text,
            "annotations": {
                attr: [{"value": a.value, "start": a.start, "end": a.end}
                       for a in anns]
                for attr, anns in sorted(self.annotations.items())
            },
        }

    def token_spans(self):
        """Project character annotations onto token index spans.

        Offsets that fall inside a token are snapped to the nearest token
        boundary with a warning.
        """
        tokens, offsets = tokenize_with_offsets(self.text)
        spans = {}
        for attr, anns in self.annotations.items():
            out = []
            for ann in anns:
                first = last = None
                for i, (s, e) in enumerate(offsets):
                    if e > ann.start and first is None:
                        first = i
                    if s < ann.end:
                        last = i
                if first is None or last is None or first > last:
                    raise CorpusValidationError(
                        f"{self.id}: annotation {ann.value!r} covers no tokens"
                    )
                if offsets[first][0] != ann.start or offsets[last][1] != ann.end:
                    log.warning(
                        "%s: snapped annotation %r [%d, %d) to token boundary",
                        self.id, ann.value, ann.start, ann.end)
                out.append((first, last + 1))
            spans[attr] = out
        return tokens, spans

    def to_sample(self) -> LabeledSample:
        tokens, spans = self.token_spans()
        return LabeledSample(id=self.id, tokens=tokens, spans=spans)

    def attributes(self):
        return sorted(self.annotations)


def load_corpus(path):
    """Read profiles from a JSONL file; empty files yield an empty list."""
    profiles = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"invalid JSON in {path}: {exc.msg}", lineno)
            try:
                profile = ProductProfile(
                    id=str(record["id"]),
                    field_kind=record["field_kind"],
                    text=record["text"],
                    annotations={
                        attr: [Annotation(a["value"], int(a["start"]), int(a["end"]))
                               for a in anns]
                        for attr, anns in record.get("annotations", {}).items()
                    },
                )
            except (KeyError, TypeError) as exc:
                raise IngestionError(f"missing or malformed field: {exc}", lineno)
            if profile.field_kind not in FIELD_KINDS:
                raise IngestionError(
                    f"field_kind must be one of {FIELD_KINDS}", lineno)
            if profile.id in seen:
                raise IngestionError(f"duplicate profile id {profile.id!r}", lineno)
            seen.add(profile.id)
            for attr, anns in profile.annotations.items():
                for ann in anns:
                    snippet = profile.text[ann.start:ann.end]
                    if snippet.lower() != ann.value.lower():
                        raise CorpusValidationError(
                            f"line {lineno}: annotation value {ann.value!r} does "
                            f"not match text slice {snippet!r} at "
                            f"[{ann.start}, {ann.end})"
                        )
            profiles.append(profile)
    return profiles


def save_corpus(profiles, path):
    with open(path, "w", encoding="utf-8") as fh:
        for profile in profiles:
            fh.write(json.dumps(profile.to_record(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# splits


@dataclass
class DatasetSplit:
    train_ids: list
    test_ids: list
    kind: str


def _value_keys(profile):
    keys = set()
    for attr, anns in profile.annotations.items():
        for ann in anns:
            keys.add((attr, " ".join(ann.value.lower().split())))
    return keys


def split(corpus, kind, ratio=0.5, seed=0) -> DatasetSplit:
    """Partition profile ids into train/test.

    kind="random": seeded shuffle then cut at ratio (train share).
    kind="disjoint": connected components over shared attribute values are
    assigned whole to one side, greedily approaching the ratio; fails if
    the achievable train share misses the request by more than 0.10.
    """
    if not corpus:
        raise ContractError("cannot split an empty corpus")
    if kind == "random":
        rng = np.random.default_rng(seed)
        order = list(rng.permutation(len(corpus)))
        cut = int(round(ratio * len(corpus)))
        ids = [corpus[i].id for i in order]
        return DatasetSplit(train_ids=sorted(ids[:cut]),
                            test_ids=sorted(ids[cut:]), kind="random")
    if kind != "disjoint":
        raise ContractError(f"unknown split kind {kind!r}")

    parent = list(range(len(corpus)))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(i, j):
        parent[find(i)] = find(j)

    owner = {}
    for idx, profile in enumerate(corpus):
        for key in _value_keys(profile):
            if key in owner:
                union(idx, owner[key])
            else:
                owner[key] = idx
    components = {}
    for idx in range(len(corpus)):
        components.setdefault(find(idx), []).append(idx)
    groups = list(components.values())
    rng = np.random.default_rng(seed)
    rng.shuffle(groups)
    groups.sort(key=len, reverse=True)  # stable: ties stay shuffled

    total = len(corpus)
    target_train = ratio * total
    train, test = [], []
    for group in groups:
        deficit_train = target_train - len(train)
        deficit_test = (total - target_train) - len(test)
        side = train if deficit_train >= deficit_test else test
        side.extend(group)
    achieved = len(train) / total
    if abs(achieved - ratio) > 0.10:
        raise ContractError(
            f"disjoint split cannot reach ratio {ratio:.2f}; "
            f"achievable ratio is {achieved:.2f}"
        )
    train_keys = set().union(*(_value_keys(corpus[i]) for i in train)) if train else set()
    test_keys = set().union(*(_value_keys(corpus[i]) for i in test)) if test else set()
    assert not (train_keys & test_keys), "disjoint split leaked shared values"
    return DatasetSplit(
        train_ids=sorted(corpus[i].id for i in train),
        test_ids=sorted(corpus[i].id for i in test),
        kind="disjoint",
    )


def select(corpus, ids):
    by_id = {p.id: p for p in corpus}
    return [by_id[i] for i in ids]


# ---------------------------------------------------------------------------
# synthetic corpus generation


@dataclass
class SyntheticSpec:
    """Declarative recipe for a templated product-title corpus.

    Values of an attribute are grouped into co-occurrence groups: a sample
    draws all its values from one group, so the sample-value graph stays
    splittable into value-disjoint sides. A fraction of multi-token values
    per attribute is reserved for the test side only, exercising the
    open-world setting with tokens that still occur in training.
    """

    attributes: dict              # attr -> list of value strings
    templates: list               # template token strings with <slots>
    sample_count: int = 1000
    train_fraction: float = 0.5
    owa_fraction: float = 0.2
    value_groups: int = 20
    distractor_numbers: tuple = ("1.5", "2.5", "3.5", "5.5", "7.5", "12.5")
    distractor_units: tuple = ("oz", "lb")

    def to_json(self):
        return {
            "schema": SYNTH_SCHEMA,
            "attributes": self.attributes,
            "templates": self.templates,
            "sample_count": self.sample_count,
            "train_fraction": self.train_fraction,
            "owa_fraction": self.owa_fraction,
            "value_groups": self.value_groups,
            "distractor_numbers": list(self.distractor_numbers),
            "distractor_units": list(self.distractor_units),
        }

    @classmethod
    def from_json(cls, obj):
        if obj.get("schema", SYNTH_SCHEMA) != SYNTH_SCHEMA:
            raise IngestionError(f"unsupported spec schema {obj.get('schema')!r}")
        return cls(
            attributes=obj["attributes"],
            templates=obj["templates"],
            sample_count=obj.get("sample_count", 1000),
            train_fraction=obj.get("train_fraction", 0.5),
            owa_fraction=obj.get("owa_fraction", 0.2),
            value_groups=obj.get("value_groups", 20),
            distractor_numbers=tuple(obj.get("distractor_numbers",
                                             cls.distractor_numbers)),
            distractor_units=tuple(obj.get("distractor_units",
                                           cls.distractor_units)),
        )


@dataclass
class SyntheticCorpus:
    profiles: list
    train_ids: list
    test_ids: list
    reserved: dict  # attr -> set of test-only value strings

    @property
    def split(self) -> DatasetSplit:
        return DatasetSplit(train_ids=list(self.train_ids),
                            test_ids=list(self.test_ids), kind="random")


_BRAND_FIRST = ["happy", "golden", "silver", "green", "blue",
                "wild", "sunny", "north", "cozy", "brave"]
_BRAND_SECOND = ["paws", "bowl", "tail", "creek", "meadow",
                 "ridge", "trail", "peak", "den", "heart"]
_FLAVOR_MODIFIERS = ["smoked", "roasted", "grilled", "dried", "braised",
                     "seared", "herbed", "spiced", "glazed", "stewed"]
_FLAVOR_BASES = ["duck", "lamb", "beef", "chicken", "salmon", "turkey",
                 "venison", "rabbit", "bison", "trout", "pork", "quail"]
_FLAVOR_TRIPLES = ["ranch raised lamb", "grass fed beef",
                   "free range chicken", "wild caught salmon"]
_CAPACITY_NUMBERS = ["2", "3", "4", "5", "6", "8", "10", "12", "16", "18",
                     "20", "24", "30", "36", "40", "48", "60", "72", "84", "96"]

DEFAULT_TEMPLATES = [
    "<brand> <flavor> dog food ( <capacity> )",
    "<brand> <flavor> and <flavor> dog food , <capacity>",
    "<brand> canine cuisine variety pack <flavor> & <flavor> dog food ( <capacity> )",
    "<flavor> flavor dry dog food by <brand> , <qty>",
    "<brand> adult dog food <flavor> recipe <capacity> , <qty> trays",
    "pack of <dnum> - <brand> <flavor> dog food ( <capacity> )",
    "<brand> small breed <flavor> dinner ( <capacity> ) <qty>",
    "<brand> grain free <flavor> & <flavor> wet dog food <capacity>",
]


def default_synthetic_spec(sample_count=1000, owa_fraction=0.2) -> SyntheticSpec:
    # 40 two-token brand combos out of the 10x10 word grid
    brands = [f"{a} {b}" for a in _BRAND_FIRST for b in _BRAND_SECOND][::2][:40]
    flavors = list(_FLAVOR_BASES)
    combos = [f"{m} {b}" for m in _FLAVOR_MODIFIERS for b in _FLAVOR_BASES]
    flavors += combos[::2][: 60 - len(flavors) - len(_FLAVOR_TRIPLES)]
    flavors += _FLAVOR_TRIPLES
    capacities = ([f"{n} count" for n in _CAPACITY_NUMBERS]
                  + [f"{n} pack" for n in _CAPACITY_NUMBERS])
    return SyntheticSpec(
        attributes={"brand": brands, "flavor": flavors, "capacity": capacities},
        templates=list(DEFAULT_TEMPLATES),
        sample_count=sample_count,
        owa_fraction=owa_fraction,
    )


def _partition_groups(values, n_groups, rng):
    order = list(rng.permutation(len(values)))
    groups = [[] for _ in range(min(n_groups, len(values)))]
    for pos, idx in enumerate(order):
        groups[pos % len(groups)].append(values[idx])
    return groups


def _reserve(groups, fraction, rng):
    """Mark ~fraction of multi-token values test-only, spread over groups."""
    total = sum(len(g) for g in groups)
    want = int(round(fraction * total))
    reserved = set()
    group_order = list(rng.permutation(len(groups)))
    while want > 0:
        progressed = False
        for gi in group_order:
            if want <= 0:
                break
            group = groups[gi]
            candidates = [v for v in group
                          if v not in reserved and len(v.split()) >= 2]
            unreserved = [v for v in group if v not in reserved]
            if not candidates or len(unreserved) <= 1:
                continue
            reserved.add(candidates[int(rng.integers(len(candidates)))])
            want -= 1
            progressed = True
        if not progressed:
            break
    return reserved


def generate_synthetic(spec: SyntheticSpec, seed: int) -> SyntheticCorpus:
    """Fill templates with grouped attribute values; exact gold offsets."""
    for attr, values in spec.attributes.items():
        if not values:
            raise ContractError(f"attribute {attr!r} has an empty vocabulary")
    if not spec.templates:
        raise ContractError("spec lists no templates")
    rng = np.random.default_rng(seed)

    grouped = {attr: _partition_groups(values, spec.value_groups, rng)
               for attr, values in spec.attributes.items()}
    n_groups = min(len(g) for g in grouped.values())
    reserved = {attr: _reserve(groups, spec.owa_fraction, rng)
                for attr, groups in grouped.items()}

    n_train = int(round(spec.train_fraction * spec.sample_count))
    profiles, train_ids, test_ids = [], [], []
    width = len(str(spec.sample_count))
    for i in range(spec.sample_count):
        is_train = i < n_train
        gi = int(rng.integers(n_groups))
        template = spec.templates[int(rng.integers(len(spec.templates)))]
        tokens, annotations = [], {}
        used = {attr: set() for attr in spec.attributes}
        for piece in template.split():
            if piece == "<qty>":
                num = spec.distractor_numbers[
                    int(rng.integers(len(spec.distractor_numbers)))]
                unit = spec.distractor_units[
                    int(rng.integers(len(spec.distractor_units)))]
                tokens.extend([num, unit])
            elif piece == "<dnum>":
                tokens.append(_CAPACITY_NUMBERS[
                    int(rng.integers(len(_CAPACITY_NUMBERS)))])
            elif piece.startswith("<") and piece.endswith(">"):
                attr = piece[1:-1]
                if attr not in spec.attributes:
                    raise ContractError(f"template slot {piece} has no vocabulary")
                pool = grouped[attr][gi]
                if is_train:
                    pool = [v for v in pool if v not in reserved[attr]]
                fresh = [v for v in pool if v not in used[attr]]
                if fresh:
                    pool = fresh
                value = pool[int(rng.integers(len(pool)))]
                used[attr].add(value)
                start = len(tokens)
                tokens.extend(value.split())
                annotations.setdefault(attr, []).append((value, start, len(tokens)))
            else:
                tokens.append(piece)
        text = " ".join(tokens)
        char_starts = []
        pos = 0
        for tok in tokens:
            char_starts.append(pos)
            pos += len(tok) + 1
        anns = {
            attr: [Annotation(value=v,
                              start=char_starts[s],
                              end=char_starts[e - 1] + len(tokens[e - 1]))
                   for v, s, e in items]
            for attr, items in annotations.items()
        }
        profile_id = f"s{i:0{width}d}"
        profiles.append(ProductProfile(id=profile_id, field_kind="title",
                                       text=text, annotations=anns))
        (train_ids if is_train else test_ids).append(profile_id)
    return SyntheticCorpus(profiles=profiles, train_ids=train_ids,
                           test_ids=test_ids, reserved=reserved)
