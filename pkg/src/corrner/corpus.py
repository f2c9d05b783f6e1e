"""Sentences, tag schemes, entity spans, and the on-disk CoNLL/pool formats.

Text is handled at the code-point level: one token per character for CJK
input. Pre-tokenized files may carry multi-character tokens (e.g. ASCII
alphanumeric runs) and are kept as-is.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ConllFormatError, InvalidSpansError, MalformedTagsError

SCHEMES = ("BIO", "BIOES")

_BIO_PREFIXES = frozenset("OBI")
_BIOES_PREFIXES = frozenset("OBIES")


@dataclass(frozen=True)
class Sentence:
    """A unit of text as an ordered token sequence with an opaque id."""

    tokens: tuple[str, ...]
    id: str = ""

    def __post_init__(self):
        for tok in self.tokens:
            if not tok or "\n" in tok or "\t" in tok:
                raise ValueError(f"invalid token {tok!r}: empty or contains newline/tab")

    @property
    def text(self) -> str:
        return "".join(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)


def tokenize_raw(text: str, id: str = "") -> Sentence:
    """One token per code point (tabs/newlines become spaces). Char-level
    models expect exactly this split."""
    return Sentence(tokens=tuple(" " if ch in "\t\n" else ch for ch in text), id=id)


@dataclass(frozen=True)
class LabelSet:
    """Entity type inventory plus the tag scheme used to linearize spans.

    The full tag list puts "O" first, then per type the scheme prefixes in
    B/I(/E/S) order, so tag index 0 is always "O".
    """

    types: tuple[str, ...]
    scheme: str = "BIOES"

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.types:
            raise ValueError("empty type inventory")
        seen = set()
        for t in self.types:
            if not t or t == "O":
                raise ValueError(f"invalid entity type {t!r}")
            if t in seen:
                raise ValueError(f"duplicate entity type {t!r}")
            seen.add(t)

    @property
    def tags(self) -> tuple[str, ...]:
        prefixes = ("B", "I") if self.scheme == "BIO" else ("B", "I", "E", "S")
        out = ["O"]
        for t in self.types:
            out.extend(f"{p}-{t}" for p in prefixes)
        return tuple(out)

    def tag_index(self) -> dict[str, int]:
        return {tag: i for i, tag in enumerate(self.tags)}

    def to_json(self) -> dict:
        return {"types": list(self.types), "scheme": self.scheme}

    @classmethod
    def from_json(cls, obj: dict) -> "LabelSet":
        return cls(types=tuple(obj["types"]), scheme=obj["scheme"])


@dataclass(frozen=True)
class EntitySpan:
    """Half-open token span [start, end) of one entity type.

    Equality ignores the surface: two spans match iff (start, end, type)
    match, which is exactly the exact-match criterion used in evaluation.
    """

    start: int
    end: int
    type: str
    surface: str = field(default="", compare=False)

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class LabeledSentence:
    sentence: Sentence
    tags: tuple[str, ...]

    def __post_init__(self):
        if len(self.tags) != len(self.sentence.tokens):
            raise ValueError(
                f"{len(self.tags)} tags for {len(self.sentence.tokens)} tokens"
            )


def split_tag(tag: str, scheme: str) -> tuple[str, str | None]:
    """Split "B-CITY" into ("B", "CITY"); "O" becomes ("O", None)."""
    if tag == "O":
        return "O", None
    prefixes = _BIO_PREFIXES if scheme == "BIO" else _BIOES_PREFIXES
    if len(tag) < 3 or tag[1] != "-" or tag[0] not in prefixes or tag[0] == "O":
        raise ConllFormatError(f"tag {tag!r} is not valid under scheme {scheme}")
    return tag[0], tag[2:]


def decode_spans(
    tags: Sequence[str],
    scheme: str = "BIOES",
    mode: str = "lenient",
    tokens: Sequence[str] | None = None,
) -> list[EntitySpan]:
    """Turn a tag sequence into entity spans.

    Strict mode raises MalformedTagsError at the first position where the
    sequence cannot come from a well-formed encoding. Lenient mode repairs:
    a dangling I-/E- tag opens a new span (treated as B-), and an entity
    left open is closed at the point it stops continuing.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if mode not in ("strict", "lenient"):
        raise ValueError(f"unknown mode {mode!r}")
    strict = mode == "strict"

    spans: list[EntitySpan] = []
    open_start: int | None = None
    open_type: str | None = None

    def surface(s: int, e: int) -> str:
        return "".join(tokens[s:e]) if tokens is not None else ""

    def close(end: int):
        nonlocal open_start, open_type
        if open_start is not None:
            spans.append(EntitySpan(open_start, end, open_type, surface(open_start, end)))
            open_start = open_type = None

    for i, tag in enumerate(tags):
        prefix, etype = split_tag(tag, scheme)
        if scheme == "BIO":
            if prefix == "O":
                close(i)
            elif prefix == "B":
                close(i)
                open_start, open_type = i, etype
            else:  # I
                if open_start is not None and open_type == etype:
                    continue
                if strict:
                    raise MalformedTagsError(f"I-{etype} does not continue an open entity", i)
                close(i)
                open_start, open_type = i, etype
        else:  # BIOES
            if prefix == "O":
                if open_start is not None and strict:
                    raise MalformedTagsError("entity interrupted before E- tag", i)
                close(i)
            elif prefix == "B":
                if open_start is not None and strict:
                    raise MalformedTagsError("entity interrupted before E- tag", i)
                close(i)
                open_start, open_type = i, etype
            elif prefix == "S":
                if open_start is not None and strict:
                    raise MalformedTagsError("entity interrupted before E- tag", i)
                close(i)
                spans.append(EntitySpan(i, i + 1, etype, surface(i, i + 1)))
            elif prefix == "I":
                if open_start is not None and open_type == etype:
                    continue
                if strict:
                    raise MalformedTagsError(f"I-{etype} does not continue an open entity", i)
                close(i)
                open_start, open_type = i, etype
            else:  # E
                if open_start is not None and open_type == etype:
                    spans.append(
                        EntitySpan(open_start, i + 1, etype, surface(open_start, i + 1))
                    )
                    open_start = open_type = None
                elif strict:
                    raise MalformedTagsError(f"E-{etype} does not close an open entity", i)
                else:
                    close(i)
                    open_start, open_type = i, etype

    if open_start is not None and strict and scheme == "BIOES":
        raise MalformedTagsError("entity still open at end of sequence", len(tags) - 1)
    close(len(tags))
    return spans


def encode_tags(
    spans: Iterable[EntitySpan], length: int, scheme: str = "BIOES"
) -> list[str]:
    """Inverse of strict decode_spans for a non-overlapping span set."""
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    ordered = sorted(spans, key=lambda s: s.start)
    prev_end = 0
    for s in ordered:
        if not (0 <= s.start < s.end <= length):
            raise InvalidSpansError(f"span ({s.start}, {s.end}) outside [0, {length})")
        if s.start < prev_end:
            raise InvalidSpansError(f"span ({s.start}, {s.end}) overlaps a previous span")
        prev_end = s.end
    tags = ["O"] * length
    for s in ordered:
        if scheme == "BIO":
            tags[s.start] = f"B-{s.type}"
            for i in range(s.start + 1, s.end):
                tags[i] = f"I-{s.type}"
        elif s.end - s.start == 1:
            tags[s.start] = f"S-{s.type}"
        else:
            tags[s.start] = f"B-{s.type}"
            for i in range(s.start + 1, s.end - 1):
                tags[i] = f"I-{s.type}"
            tags[s.end - 1] = f"E-{s.type}"
    return tags


def bio_to_bioes(tags: Sequence[str]) -> list[str]:
    """Re-encode a BIO sequence in BIOES (strict decode, then re-encode)."""
    spans = decode_spans(tags, scheme="BIO", mode="strict")
    return encode_tags(spans, len(tags), scheme="BIOES")


def infer_scheme(tag_sequences: Iterable[Sequence[str]]) -> str:
    """BIOES iff any E-/S- prefix occurs; plain B/I/O files are BIO."""
    for tags in tag_sequences:
        for tag in tags:
            if tag != "O" and tag[:1] in ("E", "S"):
                return "BIOES"
    return "BIO"


def read_conll(
    path,
    label_set: LabelSet | None = None,
    max_len: int | None = None,
    must_contain_entity: bool = False,
) -> list[LabeledSentence]:
    """Read two-column TSV (token<TAB>tag, blank line between sentences).

    `max_len` and `must_contain_entity` are optional ingestion filters; by
    default nothing is filtered. When a LabelSet is supplied every tag must
    belong to it.
    """
    valid_tags = set(label_set.tags) if label_set is not None else None
    sentences: list[LabeledSentence] = []
    tokens: list[str] = []
    tags: list[str] = []

    def flush():
        nonlocal tokens, tags
        if not tokens:
            return
        ls = LabeledSentence(
            sentence=Sentence(tokens=tuple(tokens), id=str(len(sentences))),
            tags=tuple(tags),
        )
        tokens, tags = [], []
        if max_len is not None and len(ls.sentence) > max_len:
            return
        if must_contain_entity and all(t == "O" for t in ls.tags):
            return
        sentences.append(ls)

    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.rstrip("\n")
            if not line:
                flush()
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ConllFormatError(
                    f"{path}:{lineno}: expected TOKEN<TAB>TAG, got {line!r}"
                )
            tok, tag = parts
            if valid_tags is not None and tag not in valid_tags:
                raise ConllFormatError(f"{path}:{lineno}: unknown tag {tag!r}")
            tokens.append(tok)
            tags.append(tag)
    flush()

    if label_set is None and sentences:
        # Reject files mixing scheme conventions: under the inferred scheme
        # every tag must parse.
        scheme = infer_scheme(ls.tags for ls in sentences)
        for ls in sentences:
            for i, tag in enumerate(ls.tags):
                try:
                    split_tag(tag, scheme)
                except ConllFormatError:
                    raise ConllFormatError(
                        f"{path}: sentence {ls.sentence.id} position {i}: "
                        f"tag {tag!r} inconsistent with inferred scheme {scheme}"
                    ) from None
    return sentences


def write_conll(sentences: Iterable[LabeledSentence], path) -> None:
    """Write the normalized form: one blank line after every sentence."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for ls in sentences:
            for tok, tag in zip(ls.sentence.tokens, ls.tags):
                fh.write(f"{tok}\t{tag}\n")
            fh.write("\n")


def read_pool(path) -> list[str]:
    """Unlabeled pool: one raw text per line; blank lines are skipped."""
    with open(path, encoding="utf-8") as fh:
        return [line.rstrip("\n") for line in fh if line.rstrip("\n")]


def write_pool(texts: Iterable[str], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for text in texts:
            fh.write(text)
            fh.write("\n")
