"""Training-free entity-type calibration by cross-instance majority voting.

For each predicted span of the input, retrieve correlated texts, tag them
with the same model, tally the types of retrieved spans whose surface
matches, and re-assign the span's type to a strict-plurality winner. Span
boundaries never change; ties keep the original type.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

from . import tagger as _tagger
from .corpus import EntitySpan, Sentence, encode_tags, tokenize_raw
from .errors import ConfigError
from .retriever import Index, retrieve_topk

MATCH_MODES = ("exact-surface", "prefix-extension")


@dataclass(frozen=True)
class VotePolicy:
    k: int = 100
    match_mode: str = "exact-surface"
    include_self_vote: bool = True
    min_votes: int = 1
    exclude_verbatim_query: bool = True

    def __post_init__(self):
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if self.min_votes < 1:
            raise ConfigError("min_votes must be >= 1")
        if self.match_mode not in MATCH_MODES:
            raise ConfigError(f"unknown match mode {self.match_mode!r}")


@dataclass(frozen=True)
class CalibrationTrace:
    """One type re-assignment: what changed and the evidence behind it."""

    sentence_id: str
    start: int
    end: int
    surface: str
    old_type: str
    new_type: str
    tally: dict[str, int]
    doc_ids: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "sentence_id": self.sentence_id,
            "start": self.start,
            "end": self.end,
            "surface": self.surface,
            "old_type": self.old_type,
            "new_type": self.new_type,
            "tally": self.tally,
            "doc_ids": list(self.doc_ids),
        }


@dataclass
class CalibrationReport:
    spans: list[list[EntitySpan]]
    tags: list[list[str]]
    traces: list[CalibrationTrace]
    n_spans: int = 0
    n_reassigned: int = 0
    reassignment_matrix: dict[tuple[str, str], int] = field(default_factory=dict)
    errors: list[tuple[str, str]] = field(default_factory=list)  # (sentence_id, message)


def _matches(query_surface: str, candidate_surface: str, mode: str) -> bool:
    if mode == "exact-surface":
        return candidate_surface == query_surface
    # prefix-extension: candidate = query surface + non-empty suffix
    return (
        len(candidate_surface) > len(query_surface)
        and candidate_surface.startswith(query_surface)
    )


def _vote_one(
    span: EntitySpan,
    neighbor_spans: Sequence[tuple[int, Sequence[EntitySpan]]],
    policy: VotePolicy,
) -> tuple[EntitySpan, CalibrationTrace | None]:
    tally: dict[str, int] = {}
    contributors: list[int] = []
    for doc_id, spans in neighbor_spans:
        matched = False
        for cand in spans:
            if _matches(span.surface, cand.surface, policy.match_mode):
                tally[cand.type] = tally.get(cand.type, 0) + 1
                matched = True
        if matched:
            contributors.append(doc_id)
    if not tally:
        return span, None

    effective = dict(tally)
    if policy.include_self_vote:
        effective[span.type] = effective.get(span.type, 0) + 1
    best = max(effective.values())
    winners = [t for t, c in effective.items() if c == best]
    if len(winners) != 1:  # no strict plurality: keep the original type
        return span, None
    winner = winners[0]
    if winner == span.type or tally.get(winner, 0) < policy.min_votes:
        return span, None
    new_span = EntitySpan(span.start, span.end, winner, span.surface)
    return new_span, (winner, effective, tuple(contributors))


def calibrate(
    model,
    index: Index,
    sentence: Sentence,
    policy: VotePolicy = VotePolicy(),
    _span_cache: dict[int, list[EntitySpan]] | None = None,
) -> tuple[list[EntitySpan], list[CalibrationTrace]]:
    """Tag one sentence and re-type its spans by neighborhood majority vote."""
    tags, spans = _tagger.tag(model, [sentence])[0]
    return _calibrate_tagged(model, index, sentence, spans, policy, _span_cache)


def calibrate_prediction(
    model,
    index: Index,
    sentence: Sentence,
    spans: Sequence[EntitySpan],
    policy: VotePolicy = VotePolicy(),
    span_cache: dict[int, list[EntitySpan]] | None = None,
) -> tuple[list[EntitySpan], list[CalibrationTrace]]:
    """Calibrate an existing prediction. With a span_cache covering every
    retrieved doc_id the model is never consulted, which lets callers vote
    over externally produced neighbor predictions."""
    return _calibrate_tagged(model, index, sentence, list(spans), policy, span_cache)


def _calibrate_tagged(model, index, sentence, spans, policy, span_cache):
    if not spans or policy.k == 0 or index.n_docs == 0:
        return list(spans), []
    result = retrieve_topk(index, sentence.text, policy.k, query_id=sentence.id)
    hits = [
        (doc_id, text)
        for doc_id, _, text in result.hits
        if not (policy.exclude_verbatim_query and text == sentence.text)
    ]
    if span_cache is None:
        span_cache = {}
    neighbor_spans = []
    for doc_id, text in hits:
        cached = span_cache.get(doc_id)
        if cached is None:
            _, cached = _tagger.tag(model, [tokenize_raw(text)])[0]
            span_cache[doc_id] = cached
        neighbor_spans.append((doc_id, cached))

    out: list[EntitySpan] = []
    traces: list[CalibrationTrace] = []
    for span in spans:
        new_span, vote = _vote_one(span, neighbor_spans, policy)
        out.append(new_span)
        if vote is not None:
            winner, effective, contributors = vote
            traces.append(
                CalibrationTrace(
                    sentence_id=sentence.id,
                    start=span.start,
                    end=span.end,
                    surface=span.surface,
                    old_type=span.type,
                    new_type=winner,
                    tally=effective,
                    doc_ids=contributors,
                )
            )
    return out, traces


def calibrate_batch(
    model,
    index: Index,
    sentences: Sequence[Sentence],
    policy: VotePolicy = VotePolicy(),
    memoize: bool = True,
    threads: int = 1,
) -> CalibrationReport:
    """Calibrate a batch; neighbors are tagged once per doc_id when memoize
    is on. Per-sentence failures are collected, not raised."""
    base = _tagger.tag(model, sentences, threads=threads)
    span_cache: dict[int, list[EntitySpan]] | None = {} if memoize else None
    report = CalibrationReport(spans=[], tags=[], traces=[])
    for sentence, (tags, spans) in zip(sentences, base):
        try:
            out, traces = _calibrate_tagged(
                model, index, sentence, spans, policy,
                span_cache if memoize else None,
            )
        except Exception as exc:  # per-sentence isolation
            report.errors.append((sentence.id, str(exc)))
            out, traces = spans, []
        report.spans.append(out)
        report.tags.append(encode_tags(out, len(sentence), model.label_set.scheme))
        report.traces.extend(traces)
        report.n_spans += len(out)
        for tr in traces:
            key = (tr.old_type, tr.new_type)
            report.reassignment_matrix[key] = report.reassignment_matrix.get(key, 0) + 1
    report.n_reassigned = len(report.traces)
    return report
