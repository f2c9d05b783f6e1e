import json
import math

import numpy as np
import pytest

from conftest import make_random_model
from oracles import brute_log_partition, brute_viterbi, finite_difference_gradient

from corrner.corpus import LabeledSentence, LabelSet, Sentence, decode_spans
from corrner.errors import ConfigError, TrainingDivergedError
from corrner.features import FeatureTemplate, FeatureVocab, default_templates
from corrner.tagger import (
    CrfModel,
    TrainConfig,
    load_model,
    log_partition,
    nll_and_gradient,
    save_model,
    tag,
    train,
    transition_masks,
    viterbi_decode,
)

ALPHABET = "甲乙丙丁"


def random_sentence(rng, n=None):
    n = n if n is not None else int(rng.integers(1, 5))
    return Sentence(tuple(rng.choice(list(ALPHABET), size=n)))


def manual_emissions(model, sentence):
    """Literal re-derivation of the emission matrix from the template
    definitions (window features with BOS/EOS padding), independent of the
    feature-extraction code."""
    tokens = sentence.tokens
    em = np.zeros((len(tokens), model.n_tags))
    for i in range(len(tokens)):
        strings = [f"U0={tokens[i]}"]
        strings.append(f"U-1={tokens[i - 1] if i > 0 else '<BOS>'}")
        strings.append(f"U1={tokens[i + 1] if i + 1 < len(tokens) else '<EOS>'}")
        for s in strings:
            fid = model.vocab.get(s)
            if fid is not None:
                em[i] += model.w_emit[fid]
    return em


class TestLogPartition:
    def test_zero_weights_analytic(self):
        rng = np.random.default_rng(0)
        model = make_random_model(rng, scale=0.0)
        sentence = Sentence(tuple("甲乙丙"))
        assert log_partition(model, sentence) == pytest.approx(
            3 * math.log(model.n_tags), abs=1e-10
        )

    def test_matches_enumeration_through_features(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            model = make_random_model(rng)
            sentence = random_sentence(rng, n=int(rng.integers(1, 4)))
            em = manual_emissions(model, sentence)
            expect = brute_log_partition(em, model.w_trans, model.w_begin, model.w_end)
            assert log_partition(model, sentence) == pytest.approx(expect, abs=1e-8)

    def test_empty_sentence_rejected(self):
        rng = np.random.default_rng(2)
        model = make_random_model(rng)
        with pytest.raises(ValueError):
            log_partition(model, Sentence(()))


def random_batch(rng, model, size):
    batch = []
    tags = model.label_set.tags
    for _ in range(size):
        sentence = random_sentence(rng)
        masks, begin_ok, _ = transition_masks(model.label_set)
        # random structurally valid tag path so gold scoring is well-defined
        choices = np.nonzero(begin_ok)[0]
        path = [int(rng.choice(choices))]
        for _ in range(len(sentence) - 1):
            nxt = np.nonzero(masks[path[-1]])[0]
            path.append(int(rng.choice(nxt)))
        batch.append(LabeledSentence(sentence, tuple(tags[i] for i in path)))
    return batch


class TestGradient:
    def _flat_params(self, model):
        return [model.w_emit, model.w_trans, model.w_begin, model.w_end]

    def test_matches_central_differences(self):
        rng = np.random.default_rng(10)
        worst = 0.0
        for case in range(12):
            model = make_random_model(
                rng, types=("A",) if case % 2 else ("A", "B"), scale=0.4
            )
            batch = random_batch(rng, model, size=int(rng.integers(1, 4)))
            l2 = float(rng.choice([0.0, 0.1]))
            loss, grads = nll_and_gradient(model, batch, l2=l2)
            analytic = grads.flat()

            params = self._flat_params(model)
            shapes = [p.shape for p in params]
            flat = np.concatenate([p.ravel() for p in params])

            def loss_at():
                off = 0
                for p, s in zip(params, shapes):
                    p[...] = flat[off : off + p.size].reshape(s)
                    off += p.size
                return nll_and_gradient(model, batch, l2=l2)[0]

            fd = finite_difference_gradient(loss_at, flat, eps=1e-5)
            rel = np.abs(analytic - fd) / np.maximum(
                1.0, np.maximum(np.abs(analytic), np.abs(fd))
            )
            worst = max(worst, float(rel.max()))
        assert worst <= 1e-4

    def test_l2_penalty_doubles(self):
        rng = np.random.default_rng(11)
        model = make_random_model(rng)
        batch = random_batch(rng, model, 2)
        base = nll_and_gradient(model, batch, l2=0.0)[0]
        l1 = nll_and_gradient(model, batch, l2=0.05)[0]
        l2 = nll_and_gradient(model, batch, l2=0.10)[0]
        assert l2 - base == pytest.approx(2 * (l1 - base), rel=1e-9)

    def test_tag_outside_label_set(self):
        rng = np.random.default_rng(12)
        model = make_random_model(rng)
        bad = [LabeledSentence(Sentence(("甲",)), ("S-TOWN",))]
        with pytest.raises(ConfigError):
            nll_and_gradient(model, bad)


class TestViterbi:
    def test_zero_weights_all_outside(self):
        rng = np.random.default_rng(20)
        model = make_random_model(rng, scale=0.0)
        tags, score = viterbi_decode(model, Sentence(tuple("甲乙丙")), constrained=False)
        assert tags == ["O", "O", "O"]
        assert score == 0.0

    def test_matches_enumeration_through_features(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            model = make_random_model(rng)
            sentence = random_sentence(rng, n=int(rng.integers(1, 5)))
            em = manual_emissions(model, sentence)
            bpath, bscore = brute_viterbi(em, model.w_trans, model.w_begin, model.w_end)
            tags, score = viterbi_decode(model, sentence, constrained=False)
            assert score == pytest.approx(bscore, abs=1e-8)
            assert tags == [model.tags[i] for i in bpath]

    def test_constrained_always_strict_decodable(self):
        rng = np.random.default_rng(22)
        for _ in range(10_000):
            model = make_random_model(rng, scale=2.0)
            sentence = random_sentence(rng)
            tags, _ = viterbi_decode(model, sentence, constrained=True)
            decode_spans(tags, "BIOES", "strict")  # raises if ill-formed
            for a, b in zip(tags, tags[1:]):
                assert not (a == "O" and b.startswith("I-"))

    def test_constrained_matches_enumeration_with_sentinel(self):
        # the oracle mirrors the documented -1e30 sentinel masking
        rng = np.random.default_rng(23)
        for _ in range(20):
            model = make_random_model(rng, scale=1.5)
            sentence = random_sentence(rng, n=int(rng.integers(1, 4)))
            em = manual_emissions(model, sentence)
            allowed, begin_ok, end_ok = transition_masks(model.label_set)
            trans = np.where(allowed, model.w_trans, -1e30)
            begin = np.where(begin_ok, model.w_begin, -1e30)
            end = np.where(end_ok, model.w_end, -1e30)
            bpath, bscore = brute_viterbi(em, trans, begin, end)
            tags, score = viterbi_decode(model, sentence, constrained=True)
            assert tags == [model.tags[i] for i in bpath]
            assert score == pytest.approx(bscore, rel=1e-12)


def separable_dataset():
    # 10 sentences, every character occurs under exactly one tag
    chars = "甲乙丙丁戊己庚辛壬癸子丑寅卯辰巳午未申酉戌亥东南西北春夏秋冬"
    data = []
    for i in range(10):
        a, b, o = chars[3 * i], chars[3 * i + 1], chars[3 * i + 2]
        data.append(
            LabeledSentence(
                Sentence((a, b, o), id=str(i)), ("B-NAME", "E-NAME", "O")
            )
        )
    return data


class TestTrain:
    def test_separable_reaches_perfect_f1(self):
        data = separable_dataset()
        model = train(data, data, TrainConfig(epochs=50, batch_size=4, seed=3))
        results = tag(model, [ls.sentence for ls in data])
        for ls, (tags, got_spans) in zip(data, results):
            assert list(ls.tags) == tags, (ls.tags, tags)
            gold = decode_spans(ls.tags, "BIOES", "strict", ls.sentence.tokens)
            assert got_spans == gold
        assert len(model.history) < 50  # early stop kicked in after saturating

    def test_bit_identical_given_seed(self, tmp_path):
        data = separable_dataset()
        cfg = TrainConfig(epochs=5, batch_size=4, seed=11)
        for name in ("a", "b"):
            save_model(train(data, data[:3], cfg), tmp_path / f"{name}.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_dev_loss_improves_from_zero_init(self):
        data = separable_dataset()
        dev = data[:4]
        zero_init_loss = sum(len(ls.sentence) for ls in dev) * math.log(
            len(LabelSet(types=("NAME",)).tags)
        )
        model = train(data, dev, TrainConfig(epochs=2, batch_size=4, seed=0, l2=0.0))
        trained_loss, _ = nll_and_gradient(model, dev)
        assert trained_loss < zero_init_loss

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_aborts(self):
        data = separable_dataset()
        with pytest.raises(TrainingDivergedError):
            train(data, None, TrainConfig(epochs=3, batch_size=4, learning_rate=1e200))

    def test_bio_input_converted(self):
        data = [
            LabeledSentence(Sentence(("甲", "乙", "丙")), ("B-X", "I-X", "O")),
            LabeledSentence(Sentence(("丁", "戊")), ("B-X", "I-X")),
        ]
        model = train(data, None, TrainConfig(epochs=2, batch_size=2))
        assert model.label_set.scheme == "BIOES"

    def test_empty_train_rejected(self):
        with pytest.raises(ConfigError):
            train([], None, TrainConfig())

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(epochs=0)
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=-1)


class TestTag:
    def test_empty_batch(self):
        rng = np.random.default_rng(30)
        model = make_random_model(rng)
        assert tag(model, []) == []

    def test_order_preserved(self):
        rng = np.random.default_rng(31)
        model = make_random_model(rng)
        sents = [Sentence(tuple("甲乙"), id="first"), Sentence(tuple("丙",), id="second")]
        got = tag(model, sents)
        assert len(got) == 2
        assert len(got[0][0]) == 2 and len(got[1][0]) == 1

    def test_unseen_tokens_fall_back_to_transitions(self):
        rng = np.random.default_rng(32)
        model = make_random_model(rng)
        tags, _ = tag(model, [Sentence(tuple("学学学"))])[0]
        assert len(tags) == 3  # OOV features dropped, decoding still total

    def test_threads_match_serial(self):
        rng = np.random.default_rng(33)
        model = make_random_model(rng)
        sents = [random_sentence(rng) for _ in range(8)]
        assert tag(model, sents, threads=4) == tag(model, sents, threads=1)


class TestModelIO:
    def test_round_trip(self, tmp_path):
        data = separable_dataset()
        model = train(data, data[:3], TrainConfig(epochs=3, batch_size=4, seed=9))
        path = tmp_path / "model.json"
        save_model(model, path)
        loaded = load_model(path)
        sents = [ls.sentence for ls in data]
        assert tag(loaded, sents) == tag(model, sents)
        # re-saving the loaded model reproduces the file byte for byte
        save_model(loaded, tmp_path / "model2.json")
        assert (tmp_path / "model2.json").read_bytes() == path.read_bytes()

    def test_rejects_unknown_format(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"format": "nope"}), encoding="utf-8")
        with pytest.raises(ConfigError):
            load_model(path)
