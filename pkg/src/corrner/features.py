"""Sparse indicator features for the CRF tagger.

Templates turn (sentence, position) into feature strings. An explicit
vocabulary maps strings to ids: new strings get fresh ids while the
vocabulary is growing (training), and are dropped once it is frozen
(inference). Retrieval-derived correlation channels plug in as one more
template kind, so a model file fully describes how to reproduce its
features.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError

TEMPLATE_KINDS = ("token-unigram", "token-window", "token-bigram", "char-type", "correlation")
CHANNEL_NGRAM = "ngram-support"
CHANNEL_VOTE = "entity-vote"
BOS = "<BOS>"
EOS = "<EOS>"


@dataclass(frozen=True)
class FeatureTemplate:
    kind: str
    offset: int = 0
    channel: str = ""

    def __post_init__(self):
        if self.kind not in TEMPLATE_KINDS:
            raise ConfigError(f"unknown template kind {self.kind!r}")
        if self.kind in ("token-window", "token-bigram", "char-type"):
            if not -2 <= self.offset <= 2:
                raise ConfigError(f"template offset {self.offset} outside [-2, 2]")
        if self.kind == "correlation" and self.channel not in (CHANNEL_NGRAM, CHANNEL_VOTE):
            raise ConfigError(f"unknown correlation channel {self.channel!r}")

    def to_json(self) -> dict:
        obj = {"kind": self.kind}
        if self.kind in ("token-window", "token-bigram", "char-type"):
            obj["offset"] = self.offset
        if self.kind == "correlation":
            obj["channel"] = self.channel
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureTemplate":
        return cls(kind=obj["kind"], offset=obj.get("offset", 0), channel=obj.get("channel", ""))


def default_templates() -> tuple[FeatureTemplate, ...]:
    out = [FeatureTemplate("token-unigram")]
    out += [FeatureTemplate("token-window", offset=o) for o in (-2, -1, 1, 2)]
    out += [FeatureTemplate("token-bigram", offset=o) for o in (-1, 0)]
    out.append(FeatureTemplate("char-type"))
    return tuple(out)


def correlation_templates(channels: Sequence[str]) -> tuple[FeatureTemplate, ...]:
    return tuple(FeatureTemplate("correlation", channel=c) for c in channels)


def _char_class(token: str) -> str:
    c = token[0]
    if c.isdigit() and c.isascii():
        return "digit"
    if c.isalpha() and c.isascii():
        return "alpha"
    cp = ord(c)
    if (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
        or 0x20000 <= cp <= 0x3134F
    ):
        return "cjk"
    return "other"


def _tok(tokens: Sequence[str], i: int) -> str:
    if i < 0:
        return BOS
    if i >= len(tokens):
        return EOS
    return tokens[i]


def feature_strings(
    tokens: Sequence[str],
    position: int,
    templates: Sequence[FeatureTemplate],
    correlation=None,
) -> list[str]:
    """All feature strings firing at one position, in template order.

    `correlation` is a CorrelationFeatures-shaped object (``.values`` is a
    per-token list of channel -> value dicts) or None.
    """
    out: list[str] = []
    for tpl in templates:
        if tpl.kind == "token-unigram":
            out.append(f"U0={tokens[position]}")
        elif tpl.kind == "token-window":
            out.append(f"U{tpl.offset}={_tok(tokens, position + tpl.offset)}")
        elif tpl.kind == "token-bigram":
            a = _tok(tokens, position + tpl.offset)
            b = _tok(tokens, position + tpl.offset + 1)
            out.append(f"B{tpl.offset}={a}|{b}")
        elif tpl.kind == "char-type":
            out.append(f"T{tpl.offset}={_char_class(_tok(tokens, position + tpl.offset))}")
        else:  # correlation
            if correlation is None:
                continue
            value = correlation.values[position].get(tpl.channel)
            if value is None:
                continue
            if tpl.channel == CHANNEL_NGRAM:
                # Bin "0" means no supporting n-gram: absence is the feature.
                if value != "0":
                    out.append(f"CORR:ngram={value}")
            else:
                for etype, bin_label in value:
                    out.append(f"CORR:vote={etype}:{bin_label}")
    return out


class FeatureVocab:
    """Feature-string -> id map; insertion order defines the id space."""

    def __init__(self, strings: Sequence[str] = ()):
        self._ids: dict[str, int] = {}
        for s in strings:
            self._ids.setdefault(s, len(self._ids))

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, s: str) -> bool:
        return s in self._ids

    def add(self, s: str) -> int:
        return self._ids.setdefault(s, len(self._ids))

    def get(self, s: str) -> int | None:
        return self._ids.get(s)

    def strings(self) -> list[str]:
        return list(self._ids)


def extract_features(
    tokens: Sequence[str],
    position: int,
    templates: Sequence[FeatureTemplate],
    vocab: FeatureVocab,
    correlation=None,
    grow: bool = False,
) -> list[int]:
    """Feature ids at one position; unseen strings grow the vocabulary when
    `grow` is set and are dropped otherwise."""
    ids = []
    for s in feature_strings(tokens, position, templates, correlation):
        fid = vocab.add(s) if grow else vocab.get(s)
        if fid is not None:
            ids.append(fid)
    return ids


@dataclass
class PreparedSentence:
    """Flattened per-sentence feature layout consumed by the trainer/tagger.

    feat_ids concatenates the ids of every position; offsets[i]:offsets[i+1]
    delimits position i; pos_index repeats each position once per feature.
    """

    n: int
    feat_ids: np.ndarray
    offsets: np.ndarray
    pos_index: np.ndarray
    gold: np.ndarray | None = None


def prepare_sentence(
    tokens: Sequence[str],
    templates: Sequence[FeatureTemplate],
    vocab: FeatureVocab,
    correlation=None,
    grow: bool = False,
    gold: np.ndarray | None = None,
) -> PreparedSentence:
    per_pos = [
        extract_features(tokens, i, templates, vocab, correlation, grow)
        for i in range(len(tokens))
    ]
    counts = [len(p) for p in per_pos]
    offsets = np.zeros(len(tokens) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    flat = np.fromiter((f for p in per_pos for f in p), dtype=np.int64, count=int(offsets[-1]))
    pos_index = np.repeat(np.arange(len(tokens), dtype=np.int64), counts)
    return PreparedSentence(
        n=len(tokens), feat_ids=flat, offsets=offsets, pos_index=pos_index, gold=gold
    )


def emission_matrix(w_emit: np.ndarray, prep: PreparedSentence, n_labels: int) -> np.ndarray:
    """Per-position emission scores: row i sums w_emit over position i's features."""
    em = np.zeros((prep.n, n_labels))
    if prep.feat_ids.size == 0:
        return em
    rows = w_emit[prep.feat_ids]
    if prep.offsets.size - 1 == prep.n and np.all(np.diff(prep.offsets) > 0):
        # Fast path: every position has at least one feature, so reduceat
        # segments are all non-empty.
        em[:] = np.add.reduceat(rows, prep.offsets[:-1], axis=0)
    else:
        np.add.at(em, prep.pos_index, rows)
    return em
