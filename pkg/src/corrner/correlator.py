"""Retrieval-derived correlation features for training-time use.

A retrieved group of correlated texts is condensed into two per-token
feature channels the CRF can learn from:

- ngram-support: how many group samples contain some n-gram covering the
  token (binned), a lexical-overlap signal that marks entity material with
  longer retrieved forms.
- entity-vote: for sentence substrings that match entity surfaces predicted
  in the group by a base model, the (type, binned count) tally, a
  disambiguation signal.

Group selection mirrors a concatenation budget: top-ranked samples are taken
greedily until a sample cap or a total-length cap (query + samples + one
separator each) would be exceeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from . import tagger as _tagger
from .corpus import EntitySpan, tokenize_raw
from .errors import ConfigError
from .features import CHANNEL_NGRAM, CHANNEL_VOTE
from .retriever import Index, RetrievalResult, retrieve_topk

ALL_CHANNELS = (CHANNEL_NGRAM, CHANNEL_VOTE)


@dataclass(frozen=True)
class CorrelatorConfig:
    max_samples: int = 12
    max_total_length: int = 256
    channels: tuple[str, ...] = ALL_CHANNELS
    ngram_orders: tuple[int, ...] = (2, 3, 4)
    count_bins: tuple[int, ...] = (0, 1, 2)  # last bin is open-ended ("2+")

    def __post_init__(self):
        if self.max_samples < 0:
            raise ConfigError("max_samples must be >= 0")
        if self.max_total_length < 0:
            raise ConfigError("max_total_length must be >= 0")
        for ch in self.channels:
            if ch not in ALL_CHANNELS:
                raise ConfigError(f"unknown channel {ch!r}")
        if any(n < 2 for n in self.ngram_orders):
            raise ConfigError("n-gram orders must be >= 2")
        if list(self.count_bins) != sorted(set(self.count_bins)) or not self.count_bins:
            raise ConfigError("count_bins must be non-empty, ascending, distinct")

    def to_json(self) -> dict:
        return {
            "max_samples": self.max_samples,
            "max_total_length": self.max_total_length,
            "channels": list(self.channels),
            "ngram_orders": list(self.ngram_orders),
            "count_bins": list(self.count_bins),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CorrelatorConfig":
        return cls(
            max_samples=obj["max_samples"],
            max_total_length=obj["max_total_length"],
            channels=tuple(obj["channels"]),
            ngram_orders=tuple(obj["ngram_orders"]),
            count_bins=tuple(obj["count_bins"]),
        )


@dataclass(frozen=True)
class CorrelationFeatures:
    """Per-token channel values plus the doc ids that contributed."""

    values: tuple[dict, ...]
    provenance: tuple[int, ...] = ()


def bin_count(count: int, bins: Sequence[int]) -> str:
    """Map a count onto its bin label; the top bin is open-ended ("2+")."""
    if count >= bins[-1]:
        return f"{bins[-1]}+" if len(bins) > 1 else str(bins[-1])
    label = str(bins[0])
    for edge in bins:
        if count >= edge:
            label = str(edge)
    return label


def select_group(retrieval: RetrievalResult, config: CorrelatorConfig) -> list[str]:
    """Greedy top-ranked prefix within the sample and length budgets."""
    group: list[str] = []
    used = len(retrieval.query)
    for _, _, text in retrieval.hits:
        if len(group) >= config.max_samples:
            break
        if used + len(text) + 1 > config.max_total_length:
            break
        group.append(text)
        used += len(text) + 1
    return group


def _token_boundaries(tokens: Sequence[str]) -> tuple[str, list[int]]:
    text = "".join(tokens)
    bounds = [0]
    for t in tokens:
        bounds.append(bounds[-1] + len(t))
    return text, bounds


def ngram_support(
    tokens: Sequence[str], group: Sequence[str], config: CorrelatorConfig
) -> list[str]:
    """Per-token bin of max(#group samples containing a covering n-gram)."""
    n = len(tokens)
    counts = [0] * n
    if group:
        cache: dict[str, int] = {}
        for order in config.ngram_orders:
            for j in range(0, n - order + 1):
                gram = "".join(tokens[j : j + order])
                c = cache.get(gram)
                if c is None:
                    c = sum(1 for s in group if gram in s)
                    cache[gram] = c
                if c:
                    for i in range(j, j + order):
                        if c > counts[i]:
                            counts[i] = c
    return [bin_count(c, config.count_bins) for c in counts]


def entity_vote_channel(
    tokens: Sequence[str],
    group_predictions: Sequence[Sequence[EntitySpan]],
    config: CorrelatorConfig,
) -> list[tuple[tuple[str, str], ...] | None]:
    """Type tallies for sentence substrings matching predicted group surfaces.

    Overlapping matches are resolved longest-first, then leftmost; covered
    tokens carry the winning surface's (type, binned count) pairs.
    """
    votes: dict[str, dict[str, int]] = {}
    for spans in group_predictions:
        for sp in spans:
            if sp.surface:
                tally = votes.setdefault(sp.surface, {})
                tally[sp.type] = tally.get(sp.type, 0) + 1

    n = len(tokens)
    out: list[tuple[tuple[str, str], ...] | None] = [None] * n
    if not votes:
        return out

    text, bounds = _token_boundaries(tokens)
    boundary_of = {b: i for i, b in enumerate(bounds)}
    candidates: list[tuple[int, int, str]] = []  # (tok_start, tok_end, surface)
    for surface in votes:
        start = text.find(surface)
        while start != -1:
            end = start + len(surface)
            ts = boundary_of.get(start)
            te = boundary_of.get(end)
            if ts is not None and te is not None and ts < te:
                candidates.append((ts, te, surface))
            start = text.find(surface, start + 1)

    candidates.sort(key=lambda c: (-(c[1] - c[0]), c[0]))
    taken = [False] * n
    for ts, te, surface in candidates:
        if any(taken[ts:te]):
            continue
        tally = votes[surface]
        value = tuple(
            (etype, bin_count(c, config.count_bins)) for etype, c in sorted(tally.items())
        )
        for i in range(ts, te):
            taken[i] = True
            out[i] = value
    return out


class Correlator:
    """Binds an index, a config, and (for entity votes) a base tagging model.

    features_for() is pure given those three; group predictions are memoized
    per doc_id so repeated neighbors are tagged once.
    """

    def __init__(self, index: Index, config: CorrelatorConfig, base_model=None):
        if CHANNEL_VOTE in config.channels and base_model is None:
            raise ConfigError("entity-vote channel requires a base model")
        self.index = index
        self.config = config
        self.base_model = base_model
        self._span_cache: dict[int, list[EntitySpan]] = {}

    def config_json(self) -> dict:
        return self.config.to_json()

    def _predict(self, doc_id: int, text: str) -> list[EntitySpan]:
        spans = self._span_cache.get(doc_id)
        if spans is None:
            if text:
                _, spans = _tagger.tag(self.base_model, [tokenize_raw(text)])[0]
            else:
                spans = []
            self._span_cache[doc_id] = spans
        return spans

    def features_for(self, tokens: Sequence[str]) -> CorrelationFeatures:
        n = len(tokens)
        empty: tuple[dict, ...] = tuple({} for _ in range(n))
        if not self.config.channels or self.config.max_samples == 0:
            return CorrelationFeatures(values=empty)
        query = "".join(tokens)
        retrieval = retrieve_topk(self.index, query, self.config.max_samples)
        group = select_group(retrieval, self.config)
        if not group:
            return CorrelationFeatures(values=empty)
        group_ids = [doc_id for (doc_id, _, text) in retrieval.hits[: len(group)]]

        values = [dict() for _ in range(n)]
        if CHANNEL_NGRAM in self.config.channels:
            for i, label in enumerate(ngram_support(tokens, group, self.config)):
                values[i][CHANNEL_NGRAM] = label
        if CHANNEL_VOTE in self.config.channels:
            preds = [
                self._predict(doc_id, text)
                for doc_id, text in zip(group_ids, group)
            ]
            for i, value in enumerate(entity_vote_channel(tokens, preds, self.config)):
                if value is not None:
                    values[i][CHANNEL_VOTE] = value
        return CorrelationFeatures(values=tuple(values), provenance=tuple(group_ids))


def from_model(model, index: Index) -> Correlator:
    """Rebuild the correlator a trained model was fitted with."""
    if model.correlation_config is None:
        raise ConfigError("model carries no correlation configuration")
    config = CorrelatorConfig.from_json(model.correlation_config)
    if CHANNEL_VOTE in config.channels and model.base_model is None:
        raise ConfigError("model is missing its embedded base model")
    return Correlator(index, config, base_model=model.base_model)


def train_augmented(
    train_set,
    dev_set,
    config,
    index: Index,
    corr_config: CorrelatorConfig,
    base_model=None,
):
    """Two-pass training: fit a plain model first (unless given), then fit the
    correlation-augmented model using the plain model for group predictions."""
    if base_model is None and CHANNEL_VOTE in corr_config.channels:
        base_model = _tagger.train(train_set, dev_set, config)
    correlator = Correlator(index, corr_config, base_model=base_model)
    return _tagger.train(train_set, dev_set, config, correlator=correlator)
