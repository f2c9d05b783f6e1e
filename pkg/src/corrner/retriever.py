"""Inverted index and BM25 ranking over an unlabeled in-domain pool.

The analyzer emits one term per CJK code point and one lowercased term per
maximal ASCII alphanumeric run; everything else separates. Scoring is the
non-negative Okapi variant

    score(q, d) = sum over unique query terms t of
        idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(d) / avg_len)),
    idf(t) = ln(1 + (N - df + 0.5) / (df + 0.5))

accumulated term-at-a-time over numpy posting arrays, so a query touches
only documents containing at least one query term and zero-scoring
documents are never retrievable.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import AnalyzerVersionError, ConfigError, IndexLoadError

ANALYZER_VERSION = "cjk-ascii-1"
INDEX_META = "meta.json"
INDEX_POSTINGS = "postings.bin"
INDEX_DOCS = "docs.txt"
_POSTINGS_MAGIC = b"CRNRIDX1"
DEFAULT_MAX_DOC_LEN = 512


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0:
            raise ConfigError(f"k1 must be non-negative, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ConfigError(f"b must be in [0, 1], got {self.b}")


def _is_cjk(cp: int) -> bool:
    return (
        0x4E00 <= cp <= 0x9FFF
        or 0x3400 <= cp <= 0x4DBF
        or 0xF900 <= cp <= 0xFAFF
        or 0x20000 <= cp <= 0x3134F
    )


def analyze(text: str) -> list[str]:
    """CJK code points as single terms, ASCII alnum runs lowercased, rest dropped."""
    terms: list[str] = []
    run: list[str] = []
    for ch in text:
        if ch.isascii() and ch.isalnum():
            run.append(ch.lower())
            continue
        if run:
            terms.append("".join(run))
            run = []
        if _is_cjk(ord(ch)):
            terms.append(ch)
    if run:
        terms.append("".join(run))
    return terms


@dataclass(eq=False)
class Index:
    params: Bm25Params
    analyzer_version: str
    max_doc_len: int
    docs: list[str]
    doc_lens: np.ndarray = field(repr=False)  # int32 token counts
    avg_doc_len: float = 0.0
    postings: dict[str, tuple[np.ndarray, np.ndarray]] = field(
        default_factory=dict, repr=False
    )  # term -> (doc_ids int32 ascending, term freqs int32)
    external_ids: list[str] | None = None

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    def df(self, term: str) -> int:
        entry = self.postings.get(term)
        return 0 if entry is None else int(entry[0].size)


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    query: str
    hits: tuple[tuple[int, float, str], ...]  # (doc_id, score, text), score desc

    def __len__(self) -> int:
        return len(self.hits)


def build_index(
    texts: Iterable[str],
    params: Bm25Params = Bm25Params(),
    max_doc_len: int = DEFAULT_MAX_DOC_LEN,
    dedup: bool = False,
    external_ids: Sequence[str] | None = None,
) -> Index:
    """Index a stream of raw texts. Over-long documents are truncated to
    max_doc_len code points; with dedup on, exact repeats keep the first copy.
    """
    docs: list[str] = []
    lens: list[int] = []
    acc: dict[str, tuple[list[int], list[int]]] = {}
    kept_ids: list[str] | None = None
    if external_ids is not None:
        external_ids = list(external_ids)
        if len(set(external_ids)) != len(external_ids):
            raise ConfigError("duplicate external ids")
        kept_ids = []
    seen: set[str] | None = set() if dedup else None

    for pos, text in enumerate(texts):
        if "\n" in text:
            raise ConfigError(f"document {pos} contains a newline")
        text = text[:max_doc_len]
        if seen is not None:
            if text in seen:
                continue
            seen.add(text)
        doc_id = len(docs)
        docs.append(text)
        if kept_ids is not None:
            if pos >= len(external_ids):
                raise ConfigError("fewer external ids than documents")
            kept_ids.append(external_ids[pos])
        terms = analyze(text)
        lens.append(len(terms))
        counts: dict[str, int] = {}
        for t in terms:
            counts[t] = counts.get(t, 0) + 1
        for t, c in counts.items():
            ids, tfs = acc.setdefault(t, ([], []))
            ids.append(doc_id)
            tfs.append(c)

    doc_lens = np.array(lens, dtype=np.int32)
    avg = float(doc_lens.mean()) if len(docs) else 0.0
    postings = {
        t: (np.array(ids, dtype=np.int32), np.array(tfs, dtype=np.int32))
        for t, (ids, tfs) in acc.items()
    }
    return Index(
        params=params,
        analyzer_version=ANALYZER_VERSION,
        max_doc_len=max_doc_len,
        docs=docs,
        doc_lens=doc_lens,
        avg_doc_len=avg,
        postings=postings,
        external_ids=kept_ids,
    )


def _idf(n_docs: int, df: int) -> float:
    return float(np.log(1.0 + (n_docs - df + 0.5) / (df + 0.5)))


def _unique_terms(terms: Sequence[str]) -> list[str]:
    return list(dict.fromkeys(terms))


def bm25_score(index: Index, query_terms: Sequence[str], doc_id: int) -> float:
    """Score one document against a term list (duplicates count once)."""
    if not 0 <= doc_id < index.n_docs:
        raise ConfigError(f"unknown doc_id {doc_id}")
    k1, b = index.params.k1, index.params.b
    score = 0.0
    for t in _unique_terms(query_terms):
        entry = index.postings.get(t)
        if entry is None:
            continue
        ids, tfs = entry
        pos = int(np.searchsorted(ids, doc_id))
        if pos >= ids.size or ids[pos] != doc_id:
            continue
        tf = float(tfs[pos])
        norm = k1 * (1.0 - b + b * float(index.doc_lens[doc_id]) / index.avg_doc_len)
        score += _idf(index.n_docs, int(ids.size)) * tf * (k1 + 1.0) / (tf + norm)
    return score


def retrieve_topk(index: Index, query_text: str, k: int, query_id: str = "") -> RetrievalResult:
    """The k highest-scoring documents with score > 0, ties by ascending doc_id."""
    if k < 0:
        raise ConfigError(f"k must be non-negative, got {k}")
    terms = _unique_terms(analyze(query_text))
    if k == 0 or not terms or index.n_docs == 0:
        return RetrievalResult(query_id=query_id, query=query_text, hits=())

    k1, b = index.params.k1, index.params.b
    scores = np.zeros(index.n_docs)
    touched = np.zeros(index.n_docs, dtype=bool)
    for t in terms:
        entry = index.postings.get(t)
        if entry is None:
            continue
        ids, tfs = entry
        tf = tfs.astype(np.float64)
        norm = k1 * (1.0 - b + b * index.doc_lens[ids].astype(np.float64) / index.avg_doc_len)
        scores[ids] += _idf(index.n_docs, int(ids.size)) * tf * (k1 + 1.0) / (tf + norm)
        touched[ids] = True

    cand = np.nonzero(touched & (scores > 0.0))[0]
    if cand.size == 0:
        return RetrievalResult(query_id=query_id, query=query_text, hits=())
    # Primary key: score descending; secondary: doc_id ascending (lexsort's
    # last key is primary and cand is already ascending, so stability covers ties).
    order = cand[np.argsort(-scores[cand], kind="stable")][:k]
    hits = tuple((int(i), float(scores[i]), index.docs[i]) for i in order)
    return RetrievalResult(query_id=query_id, query=query_text, hits=hits)


def save_index(index: Index, directory) -> None:
    """Write meta.json + postings.bin + docs.txt; byte-stable for equal content."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": "corrner-index-v1",
        "n_docs": index.n_docs,
        "avg_doc_len": index.avg_doc_len,
        "k1": index.params.k1,
        "b": index.params.b,
        "max_doc_len": index.max_doc_len,
        "analyzer_version": index.analyzer_version,
        "external_ids": index.external_ids,
    }
    with open(directory / INDEX_META, "w", encoding="utf-8", newline="") as fh:
        json.dump(meta, fh, ensure_ascii=False, separators=(",", ":"))
        fh.write("\n")
    with open(directory / INDEX_DOCS, "w", encoding="utf-8", newline="") as fh:
        for doc in index.docs:
            fh.write(doc)
            fh.write("\n")
    with open(directory / INDEX_POSTINGS, "wb") as fh:
        fh.write(_POSTINGS_MAGIC)
        fh.write(struct.pack("<q", index.n_docs))
        fh.write(index.doc_lens.astype("<i4").tobytes())
        fh.write(struct.pack("<q", len(index.postings)))
        for term in sorted(index.postings):
            ids, tfs = index.postings[term]
            raw = term.encode("utf-8")
            fh.write(struct.pack("<i", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<i", ids.size))
            fh.write(ids.astype("<i4").tobytes())
            fh.write(tfs.astype("<i4").tobytes())


def load_index(directory) -> Index:
    directory = Path(directory)
    meta_path = directory / INDEX_META
    postings_path = directory / INDEX_POSTINGS
    docs_path = directory / INDEX_DOCS
    for p in (meta_path, postings_path, docs_path):
        if not p.exists():
            raise IndexLoadError(f"missing index file {p}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IndexLoadError(f"corrupt {meta_path}: {exc}") from exc
    if meta.get("format") != "corrner-index-v1":
        raise IndexLoadError(f"unsupported index format {meta.get('format')!r}")
    if meta.get("analyzer_version") != ANALYZER_VERSION:
        raise AnalyzerVersionError(
            f"index built with analyzer {meta.get('analyzer_version')!r}, "
            f"this build uses {ANALYZER_VERSION!r}"
        )

    with open(docs_path, encoding="utf-8") as fh:
        docs = [line.rstrip("\n") for line in fh]

    raw = postings_path.read_bytes()
    view = memoryview(raw)
    if bytes(view[:8]) != _POSTINGS_MAGIC:
        raise IndexLoadError(f"corrupt {postings_path}: bad magic")
    off = 8
    (n_docs,) = struct.unpack_from("<q", view, off)
    off += 8
    if n_docs != meta["n_docs"] or n_docs != len(docs):
        raise IndexLoadError("document count mismatch between index files")
    doc_lens = np.frombuffer(view, dtype="<i4", count=n_docs, offset=off).astype(np.int32)
    off += 4 * n_docs
    (n_terms,) = struct.unpack_from("<q", view, off)
    off += 8
    postings: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    try:
        for _ in range(n_terms):
            (tlen,) = struct.unpack_from("<i", view, off)
            off += 4
            term = bytes(view[off : off + tlen]).decode("utf-8")
            off += tlen
            (m,) = struct.unpack_from("<i", view, off)
            off += 4
            ids = np.frombuffer(view, dtype="<i4", count=m, offset=off).astype(np.int32)
            off += 4 * m
            tfs = np.frombuffer(view, dtype="<i4", count=m, offset=off).astype(np.int32)
            off += 4 * m
            postings[term] = (ids, tfs)
    except (struct.error, ValueError) as exc:
        raise IndexLoadError(f"corrupt {postings_path}: {exc}") from exc

    return Index(
        params=Bm25Params(k1=meta["k1"], b=meta["b"]),
        analyzer_version=meta["analyzer_version"],
        max_doc_len=meta["max_doc_len"],
        docs=docs,
        doc_lens=doc_lens,
        avg_doc_len=float(meta["avg_doc_len"]),
        postings=postings,
        external_ids=meta.get("external_ids"),
    )
