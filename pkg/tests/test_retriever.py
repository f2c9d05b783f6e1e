import json
import math

import numpy as np
import pytest

from oracles import bm25_brute_score, bm25_brute_topk

from corrner.errors import AnalyzerVersionError, ConfigError, IndexLoadError
from corrner.retriever import (
    Bm25Params,
    analyze,
    bm25_score,
    build_index,
    load_index,
    retrieve_topk,
    save_index,
)


class TestAnalyze:
    def test_mixed_cjk_ascii(self):
        assert analyze("吉林省A1路") == ["吉", "林", "省", "a1", "路"]

    def test_empty(self):
        assert analyze("") == []

    def test_separators_and_lowercase(self):
        assert analyze("Nike-Air 运动鞋") == ["nike", "air", "运", "动", "鞋"]

    def test_punctuation_only(self):
        assert analyze("—— ・ !!") == []


class TestBuildIndex:
    def test_empty_pool(self):
        idx = build_index([])
        assert idx.n_docs == 0
        assert retrieve_topk(idx, "吉林", 5).hits == ()

    def test_counts(self):
        idx = build_index(["a b", "a"])
        assert idx.df("a") == 2
        assert idx.df("b") == 1
        assert idx.avg_doc_len == pytest.approx(1.5)

    def test_idempotent(self):
        a = build_index(["吉林省", "白城市", "吉林市"])
        b = build_index(["吉林省", "白城市", "吉林市"])
        assert a.docs == b.docs
        assert np.array_equal(a.doc_lens, b.doc_lens)
        assert a.avg_doc_len == b.avg_doc_len
        assert set(a.postings) == set(b.postings)
        for t in a.postings:
            assert np.array_equal(a.postings[t][0], b.postings[t][0])
            assert np.array_equal(a.postings[t][1], b.postings[t][1])

    def test_postings_sorted_no_duplicates(self):
        rng = np.random.default_rng(0)
        docs = ["".join(rng.choice(list("甲乙丙丁"), size=5)) for _ in range(50)]
        idx = build_index(docs)
        assert idx.doc_lens.sum() / idx.n_docs == pytest.approx(
            idx.avg_doc_len, rel=1e-9
        )
        for ids, _ in idx.postings.values():
            assert np.all(np.diff(ids) > 0)
            assert ids.size <= idx.n_docs

    def test_truncation(self):
        idx = build_index(["甲乙丙丁"], max_doc_len=2)
        assert idx.docs == ["甲乙"]
        assert idx.df("丙") == 0

    def test_dedup(self):
        idx = build_index(["甲", "甲", "乙"], dedup=True)
        assert idx.docs == ["甲", "乙"]

    def test_zero_term_docs_not_retrievable(self):
        idx = build_index(["...", "甲"])
        assert idx.n_docs == 2
        hits = retrieve_topk(idx, "甲", 10).hits
        assert [h[0] for h in hits] == [1]

    def test_duplicate_external_ids(self):
        with pytest.raises(ConfigError):
            build_index(["a", "b"], external_ids=["x", "x"])

    def test_newline_rejected(self):
        with pytest.raises(ConfigError):
            build_index(["a\nb"])


class TestScore:
    def test_no_matching_term(self):
        idx = build_index(["甲乙"])
        assert bm25_score(idx, ["丙"], 0) == 0.0

    def test_worked_single_doc_example(self):
        # one document "a b a": tf(a)=2, len=avg=3, k1=1.2, b=0.75
        idx = build_index(["a b a"])
        got = bm25_score(idx, ["a"], 0)
        expect = math.log(1 + 0.5 / 1.5) * (2 * 2.2) / (2 + 1.2)
        assert got == pytest.approx(expect, abs=1e-12)
        assert got == pytest.approx(0.3956, abs=1e-4)

    def test_duplicate_query_terms_count_once(self):
        idx = build_index(["a b a", "b"])
        assert bm25_score(idx, ["a", "a"], 0) == bm25_score(idx, ["a"], 0)

    def test_unknown_doc(self):
        idx = build_index(["a"])
        with pytest.raises(ConfigError):
            bm25_score(idx, ["a"], 5)

    def test_tf_monotonicity(self):
        # more occurrences of the query term, same length: score must not drop
        idx = build_index(["甲乙乙", "甲甲乙"])
        assert bm25_score(idx, ["甲"], 1) > bm25_score(idx, ["甲"], 0)

    def test_df_anti_monotonicity(self):
        # the same document scores lower once the term appears in more documents
        low_df = build_index(["甲乙", "丙丁", "丙戊"])
        high_df = build_index(["甲乙", "甲丁", "甲戊"])
        assert bm25_score(high_df, ["甲"], 0) < bm25_score(low_df, ["甲"], 0)

    def test_b_zero_removes_length_dependence(self):
        idx = build_index(
            ["甲乙", "甲乙丙丁戊己庚辛"], params=Bm25Params(k1=1.2, b=0.0)
        )
        assert bm25_score(idx, ["甲"], 0) == pytest.approx(
            bm25_score(idx, ["甲"], 1), abs=1e-12
        )


def random_pool(rng, n_docs, alphabet="甲乙丙丁戊己庚辛壬癸子丑寅卯", max_len=12):
    return [
        "".join(rng.choice(list(alphabet), size=rng.integers(1, max_len)))
        for _ in range(n_docs)
    ]


class TestRetrieve:
    def test_k_zero(self):
        idx = build_index(["甲"])
        assert retrieve_topk(idx, "甲", 0).hits == ()

    def test_out_of_vocabulary_query(self):
        idx = build_index(["甲乙"])
        assert retrieve_topk(idx, "xyz", 5).hits == ()

    def test_matches_brute_force_on_random_pool(self):
        rng = np.random.default_rng(5)
        docs = random_pool(rng, 1000)
        idx = build_index(docs)
        docs_terms = [analyze(d) for d in docs]
        for _ in range(30):
            query = "".join(rng.choice(list("甲乙丙丁戊己庚辛"), size=rng.integers(1, 6)))
            got = retrieve_topk(idx, query, 20)
            expect = bm25_brute_topk(docs_terms, analyze(query), 20, 1.2, 0.75)
            assert [h[0] for h in got.hits] == [d for d, _ in expect]
            for (_, score, _), (_, bscore) in zip(got.hits, expect):
                assert score == pytest.approx(bscore, abs=1e-9)

    def test_scores_non_increasing_and_positive(self):
        rng = np.random.default_rng(6)
        idx = build_index(random_pool(rng, 200))
        res = retrieve_topk(idx, "甲乙丙", 50)
        scores = [s for _, s, _ in res.hits]
        assert all(s > 0 for s in scores)
        assert all(a >= b for a, b in zip(scores, scores[1:]))
        assert len(res) <= 50


class TestSaveLoad:
    def test_round_trip_preserves_retrieval(self, tmp_path):
        rng = np.random.default_rng(9)
        docs = random_pool(rng, 300)
        idx = build_index(docs)
        save_index(idx, tmp_path / "idx")
        loaded = load_index(tmp_path / "idx")
        assert loaded.avg_doc_len == idx.avg_doc_len
        for query in ("甲乙", "丙丁戊", "子丑"):
            a = retrieve_topk(idx, query, 10)
            b = retrieve_topk(loaded, query, 10)
            assert a.hits == b.hits

    def test_resave_byte_identical(self, tmp_path):
        idx = build_index(["吉林省", "白城市"])
        save_index(idx, tmp_path / "a")
        save_index(load_index(tmp_path / "a"), tmp_path / "b")
        for name in ("meta.json", "postings.bin", "docs.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (
                tmp_path / "b" / name
            ).read_bytes()

    def test_missing_file(self, tmp_path):
        idx = build_index(["甲"])
        save_index(idx, tmp_path / "idx")
        (tmp_path / "idx" / "postings.bin").unlink()
        with pytest.raises(IndexLoadError):
            load_index(tmp_path / "idx")

    def test_analyzer_version_mismatch(self, tmp_path):
        idx = build_index(["甲"])
        save_index(idx, tmp_path / "idx")
        meta_path = tmp_path / "idx" / "meta.json"
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
        meta["analyzer_version"] = "something-else"
        meta_path.write_text(json.dumps(meta), encoding="utf-8")
        with pytest.raises(AnalyzerVersionError):
            load_index(tmp_path / "idx")

    def test_corrupt_postings(self, tmp_path):
        idx = build_index(["甲"])
        save_index(idx, tmp_path / "idx")
        (tmp_path / "idx" / "postings.bin").write_bytes(b"garbage!")
        with pytest.raises(IndexLoadError):
            load_index(tmp_path / "idx")
