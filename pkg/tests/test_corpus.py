import numpy as np
import pytest

from corrner.corpus import (
    EntitySpan,
    LabeledSentence,
    LabelSet,
    Sentence,
    bio_to_bioes,
    decode_spans,
    encode_tags,
    infer_scheme,
    read_conll,
    read_pool,
    tokenize_raw,
    write_conll,
    write_pool,
)
from corrner.errors import ConllFormatError, InvalidSpansError, MalformedTagsError


def spans(*triples):
    return [EntitySpan(s, e, t) for s, e, t in triples]


class TestDecode:
    def test_bioes_basic(self):
        got = decode_spans(["S-PROV", "B-CITY", "E-CITY"], "BIOES", "strict")
        assert got == spans((0, 1, "PROV"), (1, 3, "CITY"))

    def test_no_entities(self):
        assert decode_spans(["O", "O"], "BIOES", "strict") == []

    def test_lenient_dangling_open(self):
        got = decode_spans(["I-CITY", "E-CITY", "O"], "BIOES", "lenient")
        assert got == spans((0, 2, "CITY"))

    def test_strict_rejects_dangling(self):
        with pytest.raises(MalformedTagsError) as err:
            decode_spans(["I-CITY", "E-CITY", "O"], "BIOES", "strict")
        assert err.value.position == 0

    def test_strict_rejects_unclosed_entity(self):
        with pytest.raises(MalformedTagsError) as err:
            decode_spans(["B-CITY", "O"], "BIOES", "strict")
        assert err.value.position == 1
        with pytest.raises(MalformedTagsError) as err:
            decode_spans(["B-CITY", "I-CITY"], "BIOES", "strict")
        assert err.value.position == 1

    def test_strict_rejects_type_switch(self):
        with pytest.raises(MalformedTagsError):
            decode_spans(["B-CITY", "E-PROV"], "BIOES", "strict")

    def test_bio(self):
        assert decode_spans(["B-A", "I-A", "O", "B-B"], "BIO", "strict") == spans(
            (0, 2, "A"), (3, 4, "B")
        )
        # I after O repairs to a new span leniently, errors strictly
        assert decode_spans(["O", "I-A"], "BIO", "lenient") == spans((1, 2, "A"))
        with pytest.raises(MalformedTagsError):
            decode_spans(["O", "I-A"], "BIO", "strict")

    def test_surfaces(self):
        got = decode_spans(["B-X", "E-X"], "BIOES", "strict", tokens=("吉", "林"))
        assert got[0].surface == "吉林"

    def test_bad_tag(self):
        with pytest.raises(ConllFormatError):
            decode_spans(["Q-X"], "BIOES", "lenient")
        with pytest.raises(ConllFormatError):
            decode_spans(["E-X"], "BIO", "lenient")


class TestEncode:
    def test_examples(self):
        assert encode_tags(spans((0, 2, "CITY")), 3, "BIOES") == ["B-CITY", "E-CITY", "O"]
        assert encode_tags([], 2, "BIO") == ["O", "O"]
        assert encode_tags(spans((1, 2, "PROV")), 2, "BIOES") == ["O", "S-PROV"]

    def test_overlap_rejected(self):
        with pytest.raises(InvalidSpansError):
            encode_tags(spans((0, 2, "A"), (1, 3, "B")), 4, "BIOES")

    def test_out_of_bounds_rejected(self):
        with pytest.raises(InvalidSpansError):
            encode_tags(spans((0, 3, "A")), 2, "BIOES")


def random_span_set(rng, length):
    out = []
    pos = 0
    while pos < length:
        if rng.random() < 0.4:
            width = int(rng.integers(1, min(4, length - pos) + 1))
            out.append(EntitySpan(pos, pos + width, rng.choice(["A", "B", "C"])))
            pos += width
        else:
            pos += 1
    return out


class TestRoundTrip:
    @pytest.mark.parametrize("scheme", ["BIO", "BIOES"])
    def test_fuzzed_round_trip(self, scheme):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            length = int(rng.integers(1, 12))
            s = random_span_set(rng, length)
            tags = encode_tags(s, length, scheme)
            assert decode_spans(tags, scheme, "strict") == s

    def test_lenient_fuzz_never_overlaps(self):
        rng = np.random.default_rng(8)
        vocab = ["O", "B-A", "I-A", "E-A", "S-A", "B-B", "I-B", "E-B", "S-B"]
        for _ in range(1000):
            tags = [vocab[i] for i in rng.integers(0, len(vocab), size=rng.integers(1, 10))]
            got = decode_spans(tags, "BIOES", "lenient")
            for a, b in zip(got, got[1:]):
                assert a.end <= b.start  # sorted and non-overlapping

    def test_bio_to_bioes(self):
        assert bio_to_bioes(["B-A", "I-A", "B-A", "O"]) == ["B-A", "E-A", "S-A", "O"]


class TestLabelSet:
    def test_tag_inventory(self):
        ls = LabelSet(types=("CITY", "PROV"), scheme="BIOES")
        assert ls.tags[0] == "O"
        assert len(ls.tags) == 2 * 4 + 1
        assert LabelSet(types=("X",), scheme="BIO").tags == ("O", "B-X", "I-X")

    def test_invalid(self):
        with pytest.raises(ValueError):
            LabelSet(types=("O",))
        with pytest.raises(ValueError):
            LabelSet(types=("A", "A"))
        with pytest.raises(ValueError):
            LabelSet(types=())


class TestConll:
    def test_read_basic(self, tmp_path):
        p = tmp_path / "a.conll"
        p.write_text("吉\tB-PROV\n林\tE-PROV\n\n", encoding="utf-8")
        got = read_conll(p)
        assert len(got) == 1
        assert got[0].tags == ("B-PROV", "E-PROV")
        assert got[0].sentence.tokens == ("吉", "林")

    def test_round_trip_byte_identical(self, tmp_path):
        content = "吉\tB-PROV\n林\tE-PROV\n\n甲\tO\n\n"
        src = tmp_path / "in.conll"
        src.write_text(content, encoding="utf-8")
        out = tmp_path / "out.conll"
        write_conll(read_conll(src), out)
        assert out.read_bytes() == content.encode("utf-8")
        # a second normalization pass is stable
        out2 = tmp_path / "out2.conll"
        write_conll(read_conll(out), out2)
        assert out2.read_bytes() == out.read_bytes()

    def test_space_separator_rejected(self, tmp_path):
        p = tmp_path / "bad.conll"
        p.write_text("吉 B-PROV\n", encoding="utf-8")
        with pytest.raises(ConllFormatError, match="1"):
            read_conll(p)

    def test_ragged_line_rejected(self, tmp_path):
        p = tmp_path / "bad.conll"
        p.write_text("吉\tB-PROV\textra\n", encoding="utf-8")
        with pytest.raises(ConllFormatError):
            read_conll(p)

    def test_unknown_tag_with_label_set(self, tmp_path):
        p = tmp_path / "a.conll"
        p.write_text("吉\tB-TOWN\n\n", encoding="utf-8")
        with pytest.raises(ConllFormatError, match="B-TOWN"):
            read_conll(p, label_set=LabelSet(types=("CITY",)))

    def test_mixed_scheme_via_label_set(self, tmp_path):
        # an E- tag in a file read under a BIO label set is a scheme clash
        p = tmp_path / "a.conll"
        p.write_text("吉\tB-X\n林\tE-X\n\n", encoding="utf-8")
        with pytest.raises(ConllFormatError):
            read_conll(p, label_set=LabelSet(types=("X",), scheme="BIO"))

    def test_garbage_tag_rejected(self, tmp_path):
        p = tmp_path / "a.conll"
        p.write_text("吉\tFOO\n\n", encoding="utf-8")
        with pytest.raises(ConllFormatError):
            read_conll(p)

    def test_filters(self, tmp_path):
        p = tmp_path / "a.conll"
        p.write_text("甲\tO\n乙\tO\n\n丙\tS-X\n\n", encoding="utf-8")
        assert len(read_conll(p)) == 2
        assert len(read_conll(p, max_len=1)) == 1
        assert len(read_conll(p, must_contain_entity=True)) == 1

    def test_infer_scheme(self):
        assert infer_scheme([("B-A", "I-A")]) == "BIO"
        assert infer_scheme([("B-A", "E-A")]) == "BIOES"


class TestPoolIO:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "pool.txt"
        write_pool(["吉林省", "白城市"], p)
        assert read_pool(p) == ["吉林省", "白城市"]

    def test_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "pool.txt"
        p.write_text("a\n\nb\n", encoding="utf-8")
        assert read_pool(p) == ["a", "b"]


class TestSentence:
    def test_tokenize_raw(self):
        s = tokenize_raw("吉A1林")
        assert s.tokens == ("吉", "A", "1", "林")

    def test_token_validation(self):
        with pytest.raises(ValueError):
            Sentence(tokens=("a", ""))
        with pytest.raises(ValueError):
            Sentence(tokens=("a\tb",))

    def test_labeled_alignment(self):
        with pytest.raises(ValueError):
            LabeledSentence(Sentence(("a",)), ("O", "O"))
