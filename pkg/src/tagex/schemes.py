"""Tagging schemes (BIOE, UBIOE, IOB), span encoding/decoding, and
full-credit evaluation.

Tag names are bare positional symbols ("B", "I", ...) for a single
attribute and attribute-prefixed ("flavor-B") for joint multi-attribute
tagging, with one "O" shared by all attributes. Decoding is conservative
and total: only maximal well-formed segments produce values, everything
else is dropped, and no input ever raises.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .crf import FORBIDDEN_SCORE
from .errors import ContractError

SCHEME_POSITIONS = {
    "BIOE": ["B", "I", "E"],
    "UBIOE": ["U", "B", "I", "E"],
    "IOB": ["B", "I"],
}

SCHEME_SIZES = {kind: len(p) + 1 for kind, p in SCHEME_POSITIONS.items()}

ExtractionResult = dict  # attribute -> set of value strings


@dataclass(frozen=True)
class TagScheme:
    kind: str
    attributes: tuple

    def __init__(self, kind, attributes):
        if kind not in SCHEME_POSITIONS:
            raise ContractError(f"unknown scheme kind {kind!r}")
        attributes = tuple(attributes)
        if not attributes:
            raise ContractError("a scheme needs at least one attribute")
        if len(set(attributes)) != len(attributes):
            raise ContractError("attribute names must be unique")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "attributes", attributes)

    @property
    def size(self) -> int:
        return SCHEME_SIZES[self.kind]

    @property
    def tags(self) -> list:
        """Tag names: O first, then each attribute's positional tags."""
        out = ["O"]
        for attr in self.attributes:
            for pos in SCHEME_POSITIONS[self.kind]:
                out.append(self._name(attr, pos))
        return out

    def _name(self, attr, pos):
        if len(self.attributes) == 1:
            return pos
        return f"{attr}-{pos}"

    def index(self, tag) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise ContractError(f"tag {tag!r} is not in scheme {self.kind}")

    def split_tag(self, tag):
        """Return (attribute, position) or (None, 'O')."""
        if tag == "O":
            return None, "O"
        if len(self.attributes) == 1:
            if tag in SCHEME_POSITIONS[self.kind]:
                return self.attributes[0], tag
            return None, None
        attr, _, pos = tag.rpartition("-")
        if attr in self.attributes and pos in SCHEME_POSITIONS[self.kind]:
            return attr, pos
        return None, None

    def names(self, indices) -> list:
        table = self.tags
        return [table[i] for i in indices]


@dataclass
class LabeledSample:
    """A token sequence with gold [start, end) token spans per attribute."""

    id: str
    tokens: list
    spans: dict = field(default_factory=dict)

    def tags(self, scheme: TagScheme) -> list:
        return encode_spans(self.tokens, self.spans, scheme)

    def gold_values(self) -> ExtractionResult:
        out = {attr: set() for attr in self.spans}
        for attr, spans in self.spans.items():
            for start, end in spans:
                out[attr].add(" ".join(self.tokens[start:end]))
        return out


def _check_spans(n_tokens, spans):
    taken = []
    for attr, ranges in spans.items():
        for start, end in ranges:
            if not (0 <= start < end <= n_tokens):
                raise ContractError(
                    f"span [{start}, {end}) out of bounds for {n_tokens} tokens"
                )
            for s, e in taken:
                if start < e and s < end:
                    raise ContractError(
                        f"overlapping spans [{s}, {e}) and [{start}, {end})"
                    )
            taken.append((start, end))


def encode_spans(tokens, spans, scheme: TagScheme) -> list:
    """Produce the gold tag sequence for non-overlapping value spans."""
    _check_spans(len(tokens), spans)
    tags = ["O"] * len(tokens)
    for attr, ranges in spans.items():
        if attr not in scheme.attributes:
            raise ContractError(f"attribute {attr!r} not in scheme")
        for start, end in ranges:
            width = end - start
            if width == 1:
                head = "U" if scheme.kind == "UBIOE" else "B"
                tags[start] = scheme._name(attr, head)
                continue
            tags[start] = scheme._name(attr, "B")
            for i in range(start + 1, end - 1):
                tags[i] = scheme._name(attr, "I")
            last = "I" if scheme.kind == "IOB" else "E"
            tags[end - 1] = scheme._name(attr, last)
    return tags


def extract_spans(tags, scheme: TagScheme, bare_b_is_value=True) -> list:
    """Maximal well-formed segments from a (possibly noisy) tag sequence.

    Returns a list of (attribute, start, end). Accepted patterns:
    BIOE: B I* E, plus bare B when bare_b_is_value; UBIOE: U or B I* E;
    IOB: B I*. Everything else (orphan I/E, unclosed runs) is dropped.
    """
    names = list(tags)
    if names and isinstance(names[0], (int, np.integer)):
        names = scheme.names(names)
    spans = []
    n = len(names)
    i = 0
    while i < n:
        attr, pos = scheme.split_tag(names[i])
        if pos == "U":
            spans.append((attr, i, i + 1))
            i += 1
            continue
        if pos != "B":
            i += 1
            continue
        j = i + 1
        while j < n and scheme.split_tag(names[j]) == (attr, "I"):
            j += 1
        if scheme.kind == "IOB":
            spans.append((attr, i, j))
            i = j
            continue
        if j < n and scheme.split_tag(names[j]) == (attr, "E"):
            spans.append((attr, i, j + 1))
            i = j + 1
            continue
        if j == i + 1 and scheme.kind == "BIOE" and bare_b_is_value:
            spans.append((attr, i, i + 1))
        i = j
    return spans


def decode_tags(tokens, tags, scheme: TagScheme,
                bare_b_is_value=True) -> ExtractionResult:
    """Decode predicted tags into per-attribute sets of value strings."""
    out = {attr: set() for attr in scheme.attributes}
    for attr, start, end in extract_spans(tags, scheme, bare_b_is_value):
        out[attr].add(" ".join(str(t) for t in tokens[start:end]))
    return out


# ---------------------------------------------------------------------------
# full-credit evaluation


@dataclass
class Metrics:
    precision: float
    recall: float
    f1: float

    def as_dict(self):
        return {"precision": self.precision, "recall": self.recall,
                "f1": self.f1}


@dataclass
class EvalReport:
    per_attribute: dict
    micro: Metrics


def _prf(tp, n_pred, n_gold) -> Metrics:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return Metrics(p, r, f)


def _normalize(value):
    return " ".join(value.lower().split())


def evaluate(predicted, gold) -> EvalReport:
    """Exact-match precision/recall/F1 per attribute plus micro-average.

    Both arguments map sample id -> {attribute -> set of value strings};
    a value counts only when the whole phrase matches.
    """
    if set(predicted) != set(gold):
        raise ContractError("prediction and gold sample ids differ")
    attrs = set()
    for results in list(predicted.values()) + list(gold.values()):
        attrs.update(results)
    counts = {attr: [0, 0, 0] for attr in attrs}  # tp, n_pred, n_gold
    for sample_id in gold:
        for attr in attrs:
            p = {_normalize(v) for v in predicted[sample_id].get(attr, ())}
            g = {_normalize(v) for v in gold[sample_id].get(attr, ())}
            counts[attr][0] += len(p & g)
            counts[attr][1] += len(p)
            counts[attr][2] += len(g)
    per_attribute = {attr: _prf(*counts[attr]) for attr in sorted(attrs)}
    totals = [sum(c[i] for c in counts.values()) for i in range(3)]
    return EvalReport(per_attribute=per_attribute, micro=_prf(*totals))


# ---------------------------------------------------------------------------
# transition validity (optional CRF hard constraints)


def transition_penalty(scheme: TagScheme, bare_b_is_value=True) -> np.ndarray:
    """Additive penalty matrix forbidding transitions that cannot occur in
    a well-formed tag sequence; used as an ablation in the CRF."""
    tags = scheme.tags
    K = len(tags)
    start, stop = K, K + 1
    penalty = np.zeros((K + 2, K + 2))

    def info(idx):
        if idx == start:
            return None, "START"
        if idx == stop:
            return None, "STOP"
        return scheme.split_tag(tags[idx])

    open_b_closes = scheme.kind == "IOB" or bare_b_is_value and scheme.kind == "BIOE"

    for i in range(K + 2):
        for j in range(K + 2):
            a_attr, a_pos = info(i)
            b_attr, b_pos = info(j)
            ok = _transition_ok(scheme.kind, a_attr, a_pos, b_attr, b_pos,
                                open_b_closes)
            if not ok:
                penalty[i, j] = FORBIDDEN_SCORE
    return penalty


def _transition_ok(kind, a_attr, a_pos, b_attr, b_pos, open_b_closes):
    if b_pos == "START" or a_pos == "STOP":
        return False
    # positions after which no segment is left open
    closed = (a_pos in ("START", "O", "E", "U")
              or (a_pos == "B" and open_b_closes)
              or (a_pos == "I" and kind == "IOB"))
    if b_pos in ("O", "B", "U", "STOP"):
        return closed
    # I/E continue a segment of the same attribute
    return a_pos in ("B", "I") and a_attr == b_attr
