"""Entity-level exact-match evaluation, multi-seed significance testing, and
the sweep/timing experiment harness.

Reports carry per-type and aggregated scores plus run metadata. Sweeps run
independent (point, seed) jobs — optionally in threads — and aggregate by
key, so scheduling never affects results.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import betainc

from . import calibrator as _calibrator
from . import correlator as _correlator
from . import tagger as _tagger
from .calibrator import VotePolicy
from .corpus import EntitySpan, LabeledSentence, decode_spans, infer_scheme
from .correlator import CorrelatorConfig
from .errors import ConfigError
from .retriever import Bm25Params, Index, build_index
from .tagger import TrainConfig

METHODS = ("plain", "voting", "correlator")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class TypeScore:
    precision: float
    recall: float
    f1: float
    n_gold: int
    n_pred: int
    n_correct: int


@dataclass
class EvalReport:
    per_type: dict[str, TypeScore]
    micro: PRF
    macro: PRF
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "per_type": {
                t: vars(s) for t, s in sorted(self.per_type.items())
            },
            "micro": vars(self.micro),
            "macro": vars(self.macro),
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EvalReport":
        return cls(
            per_type={t: TypeScore(**s) for t, s in obj["per_type"].items()},
            micro=PRF(**obj["micro"]),
            macro=PRF(**obj["macro"]),
            meta=obj.get("meta", {}),
        )


def _prf(correct: int, n_pred: int, n_gold: int) -> PRF:
    p = correct / n_pred if n_pred else 0.0
    r = correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return PRF(p, r, f1)


def entity_prf(
    gold: Sequence[Sequence[EntitySpan]],
    pred: Sequence[Sequence[EntitySpan]],
    meta: dict | None = None,
) -> EvalReport:
    """Exact-match scores: a prediction counts iff (start, end, type) all match.

    Micro aggregates counts over the corpus; macro averages over the types
    present in gold (types only ever predicted still hurt micro precision
    but get no macro row of their own).
    """
    if len(gold) != len(pred):
        raise ConfigError(
            f"gold has {len(gold)} sentences but predictions have {len(pred)}"
        )
    n_gold: dict[str, int] = {}
    n_pred: dict[str, int] = {}
    n_correct: dict[str, int] = {}
    for g_list, p_list in zip(gold, pred):
        gs = {(s.start, s.end, s.type) for s in g_list}
        ps = {(s.start, s.end, s.type) for s in p_list}
        for _, _, t in gs:
            n_gold[t] = n_gold.get(t, 0) + 1
        for _, _, t in ps:
            n_pred[t] = n_pred.get(t, 0) + 1
        for _, _, t in gs & ps:
            n_correct[t] = n_correct.get(t, 0) + 1

    per_type = {}
    for t in sorted(set(n_gold) | set(n_pred)):
        prf = _prf(n_correct.get(t, 0), n_pred.get(t, 0), n_gold.get(t, 0))
        per_type[t] = TypeScore(
            prf.precision, prf.recall, prf.f1,
            n_gold.get(t, 0), n_pred.get(t, 0), n_correct.get(t, 0),
        )
    micro = _prf(sum(n_correct.values()), sum(n_pred.values()), sum(n_gold.values()))
    gold_types = [t for t in per_type if per_type[t].n_gold > 0]
    if gold_types:
        macro = PRF(
            sum(per_type[t].precision for t in gold_types) / len(gold_types),
            sum(per_type[t].recall for t in gold_types) / len(gold_types),
            sum(per_type[t].f1 for t in gold_types) / len(gold_types),
        )
    else:
        macro = PRF(0.0, 0.0, 0.0)
    return EvalReport(per_type=per_type, micro=micro, macro=macro, meta=meta or {})


def paired_ttest(scores_a: Sequence[float], scores_b: Sequence[float]) -> float:
    """Two-tailed paired t-test p-value over per-seed scores.

    Conventions: all differences zero -> 1.0; zero variance with non-zero
    mean -> 0.0. The tail probability is the regularized incomplete beta
    I_x(df/2, 1/2) at x = df / (df + t^2).
    """
    if len(scores_a) != len(scores_b):
        raise ConfigError("paired t-test needs equally long score lists")
    n = len(scores_a)
    if n < 2:
        raise ConfigError("paired t-test needs at least 2 paired scores")
    d = np.asarray(scores_a, dtype=np.float64) - np.asarray(scores_b, dtype=np.float64)
    if np.all(d == 0.0):
        return 1.0
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        return 0.0
    t = float(d.mean()) / (sd / math.sqrt(n))
    df = n - 1
    x = df / (df + t * t)
    return float(betainc(df / 2.0, 0.5, x))


# ---------------------------------------------------------------------------
# Experiment harness


@dataclass
class Benchmark:
    """Everything one experiment needs: the three splits plus the pool/index."""

    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    test: list[LabeledSentence]
    pool: list[str]
    index: Index

    def gold_test_spans(self) -> list[list[EntitySpan]]:
        scheme = infer_scheme(ls.tags for ls in self.test)
        return [
            decode_spans(ls.tags, scheme, "strict", ls.sentence.tokens)
            for ls in self.test
        ]


@dataclass(frozen=True)
class RunSettings:
    train_config: TrainConfig = TrainConfig()
    vote_policy: VotePolicy = VotePolicy()
    corr_config: CorrelatorConfig = CorrelatorConfig()


def subsample(data: Sequence, fraction: float, seed: int) -> list:
    """Seeded sentence-level subsample; deterministic per (seed, fraction)."""
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    n = len(data)
    size = int(round(fraction * n))
    if size < 1:
        raise ConfigError(f"fraction {fraction} of {n} sentences leaves none")
    if size >= n:
        return list(data)
    rng = np.random.default_rng([seed, int(round(fraction * 1_000_000))])
    keep = np.sort(rng.choice(n, size=size, replace=False))
    return [data[i] for i in keep]


def run_point(
    bench: Benchmark,
    seed: int,
    settings: RunSettings,
    methods: Sequence[str],
    train_subset: Sequence[LabeledSentence] | None = None,
    index: Index | None = None,
    vote_policy: VotePolicy | None = None,
    corr_config: CorrelatorConfig | None = None,
    plain_model=None,
) -> dict[str, EvalReport]:
    """Train and evaluate the requested methods for one (configuration, seed)."""
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"unknown method {m!r}")
    index = bench.index if index is None else index
    vote_policy = settings.vote_policy if vote_policy is None else vote_policy
    corr_config = settings.corr_config if corr_config is None else corr_config
    train_set = bench.train if train_subset is None else list(train_subset)
    cfg = replace(settings.train_config, seed=seed)
    test_sentences = [ls.sentence for ls in bench.test]
    gold = bench.gold_test_spans()

    if plain_model is None:
        plain_model = _tagger.train(train_set, bench.dev, cfg)

    out: dict[str, EvalReport] = {}
    if "plain" in methods:
        pred = [spans for _, spans in _tagger.tag(plain_model, test_sentences)]
        out["plain"] = entity_prf(gold, pred, meta={"method": "plain", "seed": seed})
    if "voting" in methods:
        report = _calibrator.calibrate_batch(plain_model, index, test_sentences, vote_policy)
        out["voting"] = entity_prf(
            gold, report.spans,
            meta={"method": "voting", "seed": seed, "reassigned": report.n_reassigned},
        )
    if "correlator" in methods:
        aug = _correlator.train_augmented(
            train_set, bench.dev, cfg, index, corr_config, base_model=plain_model
        )
        corr = _correlator.from_model(aug, index)
        pred = [spans for _, spans in _tagger.tag(aug, test_sentences, correlator=corr)]
        out["correlator"] = entity_prf(
            gold, pred, meta={"method": "correlator", "seed": seed}
        )
    return out


@dataclass
class SweepPoint:
    value: float
    per_seed: dict[int, dict[str, EvalReport]]
    mean: dict[str, float] = field(default_factory=dict)
    std: dict[str, float] = field(default_factory=dict)
    delta_vs_plain: dict[str, float] = field(default_factory=dict)

    def finalize(self, methods: Sequence[str]):
        for m in methods:
            scores = [r[m].micro.f1 for r in self.per_seed.values() if m in r]
            if scores:
                self.mean[m] = float(np.mean(scores))
                self.std[m] = float(np.std(scores))
        base = self.mean.get("plain")
        if base is not None:
            for m in self.mean:
                self.delta_vs_plain[m] = self.mean[m] - base

    def scores(self, method: str) -> list[float]:
        return [self.per_seed[s][method].micro.f1 for s in sorted(self.per_seed)]


@dataclass
class SweepResult:
    axis: str
    methods: list[str]
    seeds: list[int]
    points: list[SweepPoint]
    meta: dict = field(default_factory=dict)

    def point(self, value) -> SweepPoint:
        for p in self.points:
            if p.value == value:
                return p
        raise KeyError(value)

    def to_json(self) -> dict:
        return {
            "axis": self.axis,
            "methods": self.methods,
            "seeds": self.seeds,
            "meta": self.meta,
            "points": [
                {
                    "value": p.value,
                    "mean": p.mean,
                    "std": p.std,
                    "delta_vs_plain": p.delta_vs_plain,
                    "per_seed": {
                        str(seed): {m: r.to_json() for m, r in by_method.items()}
                        for seed, by_method in sorted(p.per_seed.items())
                    },
                }
                for p in self.points
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SweepResult":
        points = []
        for pj in obj["points"]:
            per_seed = {
                int(seed): {m: EvalReport.from_json(r) for m, r in by_method.items()}
                for seed, by_method in pj["per_seed"].items()
            }
            point = SweepPoint(value=pj["value"], per_seed=per_seed)
            point.mean = dict(pj.get("mean", {}))
            point.std = dict(pj.get("std", {}))
            point.delta_vs_plain = dict(pj.get("delta_vs_plain", {}))
            points.append(point)
        return cls(
            axis=obj["axis"],
            methods=list(obj["methods"]),
            seeds=list(obj["seeds"]),
            points=points,
            meta=obj.get("meta", {}),
        )


def _run_sweep(
    axis: str,
    values: Sequence,
    seeds: Sequence[int],
    methods: Sequence[str],
    job: Callable,
    threads: int = 1,
    existing: SweepResult | None = None,
) -> SweepResult:
    done: dict[tuple, dict[str, EvalReport]] = {}
    if existing is not None and existing.axis == axis:
        for p in existing.points:
            for seed, by_method in p.per_seed.items():
                if all(m in by_method for m in methods):
                    done[(p.value, seed)] = by_method

    todo = [(v, s) for v in values for s in seeds if (v, s) not in done]
    if threads > 1 and len(todo) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda vs: job(*vs), todo))
    else:
        results = [job(v, s) for v, s in todo]
    for (v, s), res in zip(todo, results):
        done[(v, s)] = res

    points = []
    for v in values:
        point = SweepPoint(value=v, per_seed={s: done[(v, s)] for s in seeds})
        point.finalize(methods)
        points.append(point)
    return SweepResult(
        axis=axis, methods=list(methods), seeds=list(seeds), points=points
    )


def low_resource_sweep(
    bench: Benchmark,
    fractions: Sequence[float] = (1.0, 0.5, 0.2, 0.1, 0.05, 0.03),
    methods: Sequence[str] = ("plain", "voting"),
    seeds: Sequence[int] = tuple(range(8)),
    settings: RunSettings = RunSettings(),
    threads: int = 1,
    existing: SweepResult | None = None,
) -> SweepResult:
    """Train on seeded subsamples of the train set; evaluate on the fixed test set."""

    def job(fraction, seed):
        subset = bench.train if fraction >= 1.0 else subsample(bench.train, fraction, seed)
        return run_point(bench, seed, settings, methods, train_subset=subset)

    return _run_sweep("fraction", list(fractions), list(seeds), methods, job,
                      threads, existing)


def depth_sweep(
    bench: Benchmark,
    k_values: Sequence[int],
    seeds: Sequence[int] = tuple(range(8)),
    settings: RunSettings = RunSettings(),
    threads: int = 1,
    existing: SweepResult | None = None,
) -> SweepResult:
    """Vary the calibration retrieval depth; the base model is shared per seed."""
    methods = ("plain", "voting")
    cache: dict[int, object] = {}

    def job(k, seed):
        model = cache.get(seed)
        if model is None:
            cfg = replace(settings.train_config, seed=seed)
            model = _tagger.train(bench.train, bench.dev, cfg)
            cache[seed] = model
        return run_point(
            bench, seed, settings, methods,
            vote_policy=replace(settings.vote_policy, k=k), plain_model=model,
        )

    return _run_sweep("k", list(k_values), list(seeds), methods, job, threads, existing)


def pool_sweep(
    bench: Benchmark,
    pool_sizes: Sequence[int],
    seeds: Sequence[int] = tuple(range(8)),
    settings: RunSettings = RunSettings(),
    methods: Sequence[str] = ("plain", "voting"),
    threads: int = 1,
    existing: SweepResult | None = None,
) -> SweepResult:
    """Rebuild the index from seeded pool subsamples of the given sizes."""
    cache: dict[int, object] = {}

    def job(size, seed):
        model = cache.get(seed)
        if model is None:
            cfg = replace(settings.train_config, seed=seed)
            model = _tagger.train(bench.train, bench.dev, cfg)
            cache[seed] = model
        if size >= len(bench.pool):
            sub_pool = list(bench.pool)
        elif size == 0:
            sub_pool = []
        else:
            rng = np.random.default_rng([seed, size])
            keep = np.sort(rng.choice(len(bench.pool), size=size, replace=False))
            sub_pool = [bench.pool[i] for i in keep]
        sub_index = build_index(sub_pool, Bm25Params(bench.index.params.k1, bench.index.params.b))
        return run_point(
            bench, seed, settings, methods, index=sub_index, plain_model=model
        )

    return _run_sweep("pool", list(pool_sizes), list(seeds), methods, job,
                      threads, existing)


def sample_count_sweep(
    bench: Benchmark,
    counts: Sequence[int] = tuple(range(0, 11)),
    seeds: Sequence[int] = tuple(range(8)),
    settings: RunSettings = RunSettings(),
    threads: int = 1,
    existing: SweepResult | None = None,
) -> SweepResult:
    """Vary the correlator's group-size cap; 0 must reproduce the plain model."""
    methods = ("plain", "correlator")
    cache: dict[int, object] = {}

    def job(count, seed):
        model = cache.get(seed)
        if model is None:
            cfg = replace(settings.train_config, seed=seed)
            model = _tagger.train(bench.train, bench.dev, cfg)
            cache[seed] = model
        return run_point(
            bench, seed, settings, methods,
            corr_config=replace(settings.corr_config, max_samples=count),
            plain_model=model,
        )

    return _run_sweep("samples", list(counts), list(seeds), methods, job,
                      threads, existing)


def timing_report(
    bench: Benchmark,
    settings: RunSettings = RunSettings(),
    seed: int = 0,
    methods: Sequence[str] = ("tag", "voting", "voting-unmemoized", "correlator"),
) -> dict[str, dict[str, float]]:
    """Wall-clock seconds per method over the test set (models pre-trained and
    the index warm, so I/O stays out of the measurement)."""
    cfg = replace(settings.train_config, seed=seed)
    plain = _tagger.train(bench.train, bench.dev, cfg)
    sentences = [ls.sentence for ls in bench.test]
    rows: dict[str, dict[str, float]] = {}

    def measure(name: str, fn: Callable):
        start = time.perf_counter()
        fn()
        elapsed = time.perf_counter() - start
        rows[name] = {
            "seconds": elapsed,
            "per_sentence": elapsed / max(1, len(sentences)),
        }

    aug = None
    if "correlator" in methods:
        aug = _correlator.train_augmented(
            bench.train, bench.dev, cfg, bench.index, settings.corr_config,
            base_model=plain,
        )
    for name in methods:
        if name == "tag":
            measure(name, lambda: _tagger.tag(plain, sentences))
        elif name == "voting":
            measure(name, lambda: _calibrator.calibrate_batch(
                plain, bench.index, sentences, settings.vote_policy, memoize=True))
        elif name == "voting-unmemoized":
            measure(name, lambda: _calibrator.calibrate_batch(
                plain, bench.index, sentences, settings.vote_policy, memoize=False))
        elif name == "correlator":
            corr = _correlator.from_model(aug, bench.index)
            measure(name, lambda: _tagger.tag(aug, sentences, correlator=corr))
        else:
            raise ConfigError(f"unknown timing method {name!r}")
    return rows
