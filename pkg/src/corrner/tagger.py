"""Trainable linear-chain CRF tagger over sparse indicator features.

Scores decompose into per-position emissions (sum of feature weights),
adjacent-tag transitions, and begin/end vectors. Training maximizes the
regularized conditional log-likelihood with bias-corrected adaptive
per-coordinate steps (constant base rate); decoding is exact Viterbi,
optionally constrained to scheme-valid tag sequences.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import (
    EntitySpan,
    LabeledSentence,
    LabelSet,
    Sentence,
    bio_to_bioes,
    decode_spans,
    infer_scheme,
    split_tag,
)
from .errors import ConfigError, TrainingDivergedError
from .features import (
    FeatureTemplate,
    FeatureVocab,
    PreparedSentence,
    correlation_templates,
    default_templates,
    emission_matrix,
    prepare_sentence,
)

# Log-space stand-in for minus infinity; large enough that no reachable path
# can compensate, small enough to stay clear of float overflow.
NEG_INF = -1e30

MODEL_FORMAT = "corrner-model-v1"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    l2: float = 1e-4
    seed: int = 0
    patience: int = 8

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.patience <= 0:
            raise ConfigError("epochs, batch_size and patience must be positive")
        if self.learning_rate <= 0 or self.l2 < 0:
            raise ConfigError("learning_rate must be positive and l2 non-negative")


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    dev_micro_f1: float | None


@dataclass(eq=False)
class CrfModel:
    label_set: LabelSet
    templates: tuple[FeatureTemplate, ...]
    vocab: FeatureVocab
    w_emit: np.ndarray = field(repr=False)  # (n_features, n_tags)
    w_trans: np.ndarray = field(repr=False)  # (n_tags, n_tags)
    w_begin: np.ndarray = field(repr=False)
    w_end: np.ndarray = field(repr=False)
    train_config: dict | None = None
    correlation_config: dict | None = None
    base_model: "CrfModel | None" = None
    history: list[EpochStats] = field(default_factory=list, repr=False)

    @property
    def tags(self) -> tuple[str, ...]:
        return self.label_set.tags

    @property
    def n_tags(self) -> int:
        return len(self.label_set.tags)

    def constrained_scores(self):
        """Transition/begin/end scores with scheme-invalid moves pinned to NEG_INF."""
        cached = getattr(self, "_constrained", None)
        if cached is None:
            allowed, allowed_begin, allowed_end = transition_masks(self.label_set)
            cached = (
                np.where(allowed, self.w_trans, NEG_INF),
                np.where(allowed_begin, self.w_begin, NEG_INF),
                np.where(allowed_end, self.w_end, NEG_INF),
            )
            self._constrained = cached
        return cached


def transition_masks(label_set: LabelSet):
    """Boolean (allowed) masks: tag-to-tag, sequence-initial, sequence-final."""
    tags = label_set.tags
    L = len(tags)
    parsed = [split_tag(t, label_set.scheme) for t in tags]
    allowed = np.zeros((L, L), dtype=bool)
    begin = np.zeros(L, dtype=bool)
    end = np.zeros(L, dtype=bool)
    if label_set.scheme == "BIOES":
        opener = {"O", "B", "S"}
        for i, (p, tp) in enumerate(parsed):
            begin[i] = p in opener
            end[i] = p in ("O", "E", "S")
            for j, (q, tq) in enumerate(parsed):
                if p in ("O", "E", "S"):
                    allowed[i, j] = q in opener
                else:  # B or I: must continue the same entity
                    allowed[i, j] = q in ("I", "E") and tq == tp
    else:  # BIO
        for i, (p, tp) in enumerate(parsed):
            begin[i] = p in ("O", "B")
            end[i] = True
            for j, (q, tq) in enumerate(parsed):
                if q in ("O", "B"):
                    allowed[i, j] = True
                else:  # I-x continues B-x/I-x only
                    allowed[i, j] = p in ("B", "I") and tq == tp
    return allowed, begin, end


def _prepare(
    model: CrfModel, sentence: Sentence, correlation=None, gold: np.ndarray | None = None
) -> PreparedSentence:
    if len(sentence.tokens) == 0:
        raise ValueError("empty sentence")
    if model.correlation_config is not None and correlation is None:
        raise ConfigError(
            "model was trained with correlation features; supply a correlator"
        )
    return prepare_sentence(
        sentence.tokens, model.templates, model.vocab, correlation=correlation, gold=gold
    )


def log_partition(model: CrfModel, sentence: Sentence, correlation=None) -> float:
    """Log normalizer over all tag paths for one sentence."""
    prep = _prepare(model, sentence, correlation)
    em = emission_matrix(model.w_emit, prep, model.n_tags)
    return kernels.log_partition(em, model.w_trans, model.w_begin, model.w_end)


@dataclass
class Gradients:
    emit: np.ndarray
    trans: np.ndarray
    begin: np.ndarray
    end: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.emit.ravel(), self.trans.ravel(), self.begin, self.end]
        )


def _gold_indices(model: CrfModel, tags: Sequence[str]) -> np.ndarray:
    index = model.label_set.tag_index()
    try:
        return np.array([index[t] for t in tags], dtype=np.int64)
    except KeyError as exc:
        raise ConfigError(f"tag {exc.args[0]!r} outside the model's label set") from None


def nll_and_gradient(
    model: CrfModel,
    batch: Sequence[LabeledSentence],
    l2: float = 0.0,
    correlations: Sequence[object] | None = None,
) -> tuple[float, Gradients]:
    """Negative log-likelihood of the batch plus L2 penalty, with its gradient.

    The data gradient is (expected - empirical) feature counts from
    forward-backward marginals; the penalty adds l2 * w.
    """
    preps = [
        _prepare(
            model,
            ls.sentence,
            correlations[i] if correlations is not None else None,
            gold=_gold_indices(model, ls.tags),
        )
        for i, ls in enumerate(batch)
    ]
    loss, grads = _batch_nll_grad(model, preps, l2)
    return loss, grads


def _batch_nll_grad(model: CrfModel, preps: Sequence[PreparedSentence], l2: float):
    L = model.n_tags
    grad_emit = np.zeros_like(model.w_emit)
    grad_trans = np.zeros_like(model.w_trans)
    grad_begin = np.zeros_like(model.w_begin)
    grad_end = np.zeros_like(model.w_end)
    loss = 0.0
    feat_chunks: list[np.ndarray] = []
    err_chunks: list[np.ndarray] = []

    for p in preps:
        em = emission_matrix(model.w_emit, p, L)
        log_z, unary, pair = kernels.forward_backward(
            em, model.w_trans, model.w_begin, model.w_end
        )
        g = p.gold
        pos = np.arange(p.n)
        gold_score = model.w_begin[g[0]] + em[pos, g].sum() + model.w_end[g[-1]]
        if p.n > 1:
            gold_score += model.w_trans[g[:-1], g[1:]].sum()
        loss += log_z - gold_score

        err = unary  # kernel returns a fresh array; safe to mutate
        err[pos, g] -= 1.0
        grad_trans += pair
        if p.n > 1:
            np.subtract.at(grad_trans, (g[:-1], g[1:]), 1.0)
        grad_begin += err[0]
        grad_end += err[-1]
        if p.feat_ids.size:
            feat_chunks.append(p.feat_ids)
            err_chunks.append(err[p.pos_index])

    if feat_chunks:
        np.add.at(grad_emit, np.concatenate(feat_chunks), np.concatenate(err_chunks))

    if l2 > 0.0:
        for w, g in (
            (model.w_emit, grad_emit),
            (model.w_trans, grad_trans),
            (model.w_begin, grad_begin),
            (model.w_end, grad_end),
        ):
            loss += 0.5 * l2 * float((w * w).sum())
            g += l2 * w
    return loss, Gradients(grad_emit, grad_trans, grad_begin, grad_end)


def viterbi_decode(
    model: CrfModel, sentence: Sentence, constrained: bool = True, correlation=None
) -> tuple[list[str], float]:
    """Best tag sequence and its score; ties go to the lexicographically
    smallest tag index sequence."""
    prep = _prepare(model, sentence, correlation)
    em = emission_matrix(model.w_emit, prep, model.n_tags)
    if constrained:
        trans, begin, end = model.constrained_scores()
    else:
        trans, begin, end = model.w_trans, model.w_begin, model.w_end
    path, score = kernels.viterbi(em, trans, begin, end)
    tags = model.tags
    return [tags[i] for i in path], score


def tag(
    model: CrfModel,
    sentences: Sequence[Sentence],
    correlator=None,
    constrained: bool = True,
    threads: int = 1,
) -> list[tuple[list[str], list[EntitySpan]]]:
    """Tag a batch; spans come from lenient decoding of the predicted tags."""

    def one(sentence: Sentence):
        corr = correlator.features_for(sentence.tokens) if correlator is not None else None
        tags_, _ = viterbi_decode(model, sentence, constrained, corr)
        spans = decode_spans(tags_, model.label_set.scheme, "lenient", sentence.tokens)
        return tags_, spans

    if threads > 1 and len(sentences) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(one, sentences))
    return [one(s) for s in sentences]


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def _micro_f1(gold: Sequence[Sequence[EntitySpan]], pred: Sequence[Sequence[EntitySpan]]) -> float:
    # Minimal span-level micro F1 used for dev early stopping only; the full
    # report lives in the evaluator.
    correct = n_gold = n_pred = 0
    for g, p in zip(gold, pred):
        gs = {(s.start, s.end, s.type) for s in g}
        ps = {(s.start, s.end, s.type) for s in p}
        correct += len(gs & ps)
        n_gold += len(gs)
        n_pred += len(ps)
    prec = correct / n_pred if n_pred else 0.0
    rec = correct / n_gold if n_gold else 0.0
    return 2 * prec * rec / (prec + rec) if prec + rec else 0.0


def _normalize_scheme(data: Sequence[LabeledSentence]) -> list[LabeledSentence]:
    if not data:
        return []
    if infer_scheme(ls.tags for ls in data) == "BIO":
        return [
            LabeledSentence(ls.sentence, tuple(bio_to_bioes(ls.tags))) for ls in data
        ]
    return list(data)


def derive_label_set(data: Sequence[LabeledSentence]) -> LabelSet:
    """BIOES label set over the entity types observed in (scheme-normalized) data."""
    types = set()
    for ls in data:
        for t in ls.tags:
            if t != "O":
                types.add(t.split("-", 1)[1])
    if not types:
        raise ConfigError("training data contains no entity tags")
    return LabelSet(types=tuple(sorted(types)), scheme="BIOES")


def train(
    train_set: Sequence[LabeledSentence],
    dev_set: Sequence[LabeledSentence] | None,
    config: TrainConfig,
    correlator=None,
    label_set: LabelSet | None = None,
    templates: Sequence[FeatureTemplate] | None = None,
) -> CrfModel:
    """Fit the CRF and return the checkpoint with the best dev micro-F1.

    Deterministic given (data, config, correlator): the seed drives only
    batch shuffling, weights start at zero, and feature ids follow data
    order. BIO input is converted to BIOES internally.
    """
    if not train_set:
        raise ConfigError("empty training set")
    train_set = _normalize_scheme(train_set)
    dev_set = _normalize_scheme(dev_set) if dev_set else []
    if label_set is None:
        label_set = derive_label_set(train_set)

    if templates is None:
        templates = default_templates()
        if correlator is not None:
            templates = templates + correlation_templates(correlator.config.channels)
    templates = tuple(templates)

    def corr_for(batch):
        if correlator is None:
            return [None] * len(batch)
        return [correlator.features_for(ls.sentence.tokens) for ls in batch]

    train_corr = corr_for(train_set)
    dev_corr = corr_for(dev_set)

    vocab = FeatureVocab()
    L = len(label_set.tags)
    index = label_set.tag_index()
    preps = []
    for ls, corr in zip(train_set, train_corr):
        gold = np.array([index[t] for t in ls.tags], dtype=np.int64)
        preps.append(
            prepare_sentence(ls.sentence.tokens, templates, vocab, corr, grow=True, gold=gold)
        )
    dev_preps = [
        prepare_sentence(ls.sentence.tokens, templates, vocab, corr, grow=False)
        for ls, corr in zip(dev_set, dev_corr)
    ]
    dev_gold_spans = [
        decode_spans(ls.tags, label_set.scheme, "lenient", ls.sentence.tokens)
        for ls in dev_set
    ]

    model = CrfModel(
        label_set=label_set,
        templates=templates,
        vocab=vocab,
        w_emit=np.zeros((len(vocab), L)),
        w_trans=np.zeros((L, L)),
        w_begin=np.zeros(L),
        w_end=np.zeros(L),
        train_config=asdict(config),
        correlation_config=None if correlator is None else correlator.config_json(),
        base_model=None if correlator is None else correlator.base_model,
    )
    params = [model.w_emit, model.w_trans, model.w_begin, model.w_end]
    adam = _Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)

    best_f1 = -1.0
    best_weights = None
    stale = 0
    allowed, allowed_begin, allowed_end = transition_masks(label_set)

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(preps))
        epoch_loss = 0.0
        for lo in range(0, len(order), config.batch_size):
            batch = [preps[i] for i in order[lo : lo + config.batch_size]]
            loss, grads = _batch_nll_grad(model, batch, config.l2)
            if not math.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch offset {lo}"
                )
            epoch_loss += loss
            adam.step(params, [grads.emit, grads.trans, grads.begin, grads.end])

        dev_f1 = None
        if dev_preps:
            trans_c = np.where(allowed, model.w_trans, NEG_INF)
            begin_c = np.where(allowed_begin, model.w_begin, NEG_INF)
            end_c = np.where(allowed_end, model.w_end, NEG_INF)
            pred_spans = []
            tags_ = label_set.tags
            for p, ls in zip(dev_preps, dev_set):
                em = emission_matrix(model.w_emit, p, L)
                path, _ = kernels.viterbi(em, trans_c, begin_c, end_c)
                pred_spans.append(
                    decode_spans(
                        [tags_[i] for i in path], label_set.scheme, "lenient",
                        ls.sentence.tokens,
                    )
                )
            dev_f1 = _micro_f1(dev_gold_spans, pred_spans)
            if dev_f1 > best_f1:
                best_f1 = dev_f1
                best_weights = [p.copy() for p in params]
                stale = 0
            else:
                stale += 1
        model.history.append(EpochStats(epoch, epoch_loss, dev_f1))
        if dev_preps and stale >= config.patience:
            break

    if best_weights is not None:
        model.w_emit, model.w_trans, model.w_begin, model.w_end = best_weights
    return model


def model_to_json(model: CrfModel) -> dict:
    obj = {
        "format": MODEL_FORMAT,
        "label_set": model.label_set.to_json(),
        "templates": [t.to_json() for t in model.templates],
        "vocabulary": model.vocab.strings(),
        "weights": {
            "emission": model.w_emit.tolist(),
            "transitions": model.w_trans.tolist(),
            "begin": model.w_begin.tolist(),
            "end": model.w_end.tolist(),
        },
        "train_config": model.train_config,
        "correlation": None,
    }
    if model.correlation_config is not None:
        obj["correlation"] = {
            "config": model.correlation_config,
            "base_model": model_to_json(model.base_model) if model.base_model else None,
        }
    return obj


def model_from_json(obj: dict) -> CrfModel:
    if obj.get("format") != MODEL_FORMAT:
        raise ConfigError(f"unsupported model format {obj.get('format')!r}")
    label_set = LabelSet.from_json(obj["label_set"])
    vocab = FeatureVocab(obj["vocabulary"])
    w = obj["weights"]
    corr = obj.get("correlation")
    return CrfModel(
        label_set=label_set,
        templates=tuple(FeatureTemplate.from_json(t) for t in obj["templates"]),
        vocab=vocab,
        w_emit=np.array(w["emission"], dtype=np.float64).reshape(
            len(vocab), len(label_set.tags)
        ),
        w_trans=np.array(w["transitions"], dtype=np.float64),
        w_begin=np.array(w["begin"], dtype=np.float64),
        w_end=np.array(w["end"], dtype=np.float64),
        train_config=obj.get("train_config"),
        correlation_config=None if corr is None else corr["config"],
        base_model=(
            model_from_json(corr["base_model"])
            if corr is not None and corr.get("base_model")
            else None
        ),
    )


def save_model(model: CrfModel, path, extra_meta: dict | None = None) -> None:
    obj = model_to_json(model)
    if extra_meta:
        obj.update(extra_meta)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(obj, fh, ensure_ascii=False, separators=(",", ":"))
        fh.write("\n")


def load_model(path) -> CrfModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_json(json.load(fh))
