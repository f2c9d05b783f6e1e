"""Single entry point: index / train / tag / calibrate / eval / sweep / synth /
pipeline subcommands over JSON configs.

Exit codes: 0 success, 1 usage error, 2 data/format/config error, 3 internal
error. Diagnostics go to stderr; results go to files or stdout.
"""

from __future__ import annotations

import argparse
import difflib
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from . import calibrator as calibrator_mod
from . import correlator as correlator_mod
from . import evaluator as evaluator_mod
from . import synthgen as synthgen_mod
from . import tagger as tagger_mod
from .calibrator import VotePolicy
from .corpus import read_conll, read_pool, tokenize_raw, write_conll, write_pool
from .correlator import CorrelatorConfig
from .errors import ConfigError, CorrnerError
from .evaluator import Benchmark, RunSettings
from .retriever import Bm25Params, build_index, load_index, retrieve_topk, save_index
from .synthgen import GenConfig
from .tagger import TrainConfig

log = logging.getLogger("corrner")

SUBCOMMANDS = ("synth", "index", "train", "tag", "calibrate", "eval", "sweep", "pipeline")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are exit code 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def config_hash(obj) -> str:
    canon = json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_json(path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=1)
        fh.write("\n")


def _sidecar(path) -> Path:
    return Path(str(path) + ".meta.json")


def _write_sidecar(path, digest: str) -> None:
    _write_json(_sidecar(path), {"config_hash": digest, "tool_version": __version__})


def _already_done(meta_path, digest: str, force: bool) -> bool:
    if force or not Path(meta_path).exists():
        return False
    try:
        meta = json.loads(Path(meta_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return False
    return meta.get("config_hash") == digest


def _load_config(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return obj


def _dataclass_from(cls, obj: dict, what: str):
    try:
        return cls(**obj)
    except TypeError as exc:
        raise ConfigError(f"bad {what} config: {exc}") from None


def _train_config(obj: dict) -> TrainConfig:
    return _dataclass_from(TrainConfig, obj, "train")


def _vote_policy(obj: dict) -> VotePolicy:
    return _dataclass_from(VotePolicy, obj, "vote")


def _corr_config(obj: dict) -> CorrelatorConfig:
    obj = dict(obj)
    for key in ("channels", "ngram_orders", "count_bins"):
        if key in obj:
            obj[key] = tuple(obj[key])
    return _dataclass_from(CorrelatorConfig, obj, "correlator")


MATCH_ALIASES = {
    "exact": "exact-surface",
    "exact-surface": "exact-surface",
    "prefix": "prefix-extension",
    "prefix-extension": "prefix-extension",
}


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_synth(args) -> int:
    cfg = GenConfig.from_json(_load_config(args.config)) if args.config else GenConfig()
    digest = config_hash(cfg.to_json())
    out = Path(args.out)
    manifest_path = out / "manifest.json"
    if _already_done(manifest_path, digest, args.force):
        log.info("synth output up to date at %s (use --force to regenerate)", out)
        return 0
    out.mkdir(parents=True, exist_ok=True)
    corpus = synthgen_mod.generate(cfg)
    write_conll(corpus.train, out / "train.conll")
    write_conll(corpus.dev, out / "dev.conll")
    write_conll(corpus.test, out / "test.conll")
    write_pool(corpus.pool, out / "pool.txt")
    synthgen_mod.save_gazetteer(corpus.gazetteer, out / "gazetteer.json")
    _write_json(
        manifest_path,
        {
            "config_hash": digest,
            "tool_version": __version__,
            "config": cfg.to_json(),
            "counts": {
                "train": len(corpus.train),
                "dev": len(corpus.dev),
                "test": len(corpus.test),
                "pool": len(corpus.pool),
            },
        },
    )
    log.info(
        "wrote %d/%d/%d labeled sentences and %d pool texts to %s",
        len(corpus.train), len(corpus.dev), len(corpus.test), len(corpus.pool), out,
    )
    return 0


def _cmd_index_build(args) -> int:
    spec = {
        "pool": str(args.pool), "k1": args.k1, "b": args.b,
        "max_doc_len": args.max_doc_len, "dedup": args.dedup,
    }
    digest = config_hash(spec)
    out = Path(args.out)
    meta_path = out / "build.meta.json"
    if _already_done(meta_path, digest, args.force):
        log.info("index at %s is up to date (use --force to rebuild)", out)
        return 0
    texts = read_pool(args.pool)
    index = build_index(
        texts, Bm25Params(k1=args.k1, b=args.b),
        max_doc_len=args.max_doc_len, dedup=args.dedup,
    )
    save_index(index, out)
    _write_json(meta_path, {"config_hash": digest, "tool_version": __version__,
                            "n_docs": index.n_docs})
    log.info("indexed %d documents into %s", index.n_docs, out)
    return 0


def _cmd_index_query(args) -> int:
    index = load_index(args.index)
    result = retrieve_topk(index, args.text, args.k)
    for doc_id, score, text in result.hits:
        print(json.dumps({"doc_id": doc_id, "score": score, "text": text},
                         ensure_ascii=False))
    return 0


def _cmd_train(args) -> int:
    cfg = _train_config(_load_config(args.config)) if args.config else TrainConfig()
    corr_cfg = None
    if args.correlate:
        corr_cfg = (_corr_config(_load_config(args.corr_config))
                    if args.corr_config else CorrelatorConfig())
        if not args.index:
            raise ConfigError("--correlate requires --index")
    spec = {
        "train": str(args.train), "dev": str(args.dev),
        "config": cfg.__dict__, "correlate": args.correlate,
        "corr_config": corr_cfg.to_json() if corr_cfg else None,
        "index": str(args.index) if args.index else None,
    }
    digest = config_hash(spec)
    if _already_done(args.out, digest, args.force):
        log.info("model at %s is up to date (use --force to retrain)", args.out)
        return 0

    train_set = read_conll(args.train)
    dev_set = read_conll(args.dev) if args.dev else []
    if corr_cfg is not None:
        index = load_index(args.index)
        model = correlator_mod.train_augmented(train_set, dev_set, cfg, index, corr_cfg)
    else:
        model = tagger_mod.train(train_set, dev_set, cfg)
    tagger_mod.save_model(
        model, args.out,
        extra_meta={"config_hash": digest, "tool_version": __version__},
    )
    for st in model.history:
        log.info("epoch %d: train loss %.4f, dev micro-F1 %s", st.epoch,
                 st.train_loss,
                 "n/a" if st.dev_micro_f1 is None else f"{st.dev_micro_f1:.4f}")
    log.info("saved model to %s", args.out)
    return 0


def _load_model_with_correlator(model_path, index_path):
    model = tagger_mod.load_model(model_path)
    correlator = None
    if model.correlation_config is not None:
        if not index_path:
            raise ConfigError(
                "model was trained with correlation features; pass --index"
            )
        correlator = correlator_mod.from_model(model, load_index(index_path))
    return model, correlator


def _cmd_tag(args) -> int:
    model, correlator = _load_model_with_correlator(args.model, args.index)
    texts = read_pool(args.infile)
    sentences = [tokenize_raw(t, id=str(i)) for i, t in enumerate(texts)]
    results = tagger_mod.tag(model, sentences, correlator=correlator,
                             threads=args.threads)
    from .corpus import LabeledSentence

    out = [LabeledSentence(s, tuple(tags)) for s, (tags, _) in zip(sentences, results)]
    write_conll(out, args.out)
    _write_sidecar(args.out, config_hash({"model": str(args.model),
                                          "in": str(args.infile)}))
    log.info("tagged %d sentences into %s", len(out), args.out)
    return 0


def _cmd_calibrate(args) -> int:
    model, _ = _load_model_with_correlator(args.model, args.index)
    if model.correlation_config is not None:
        raise ConfigError("calibrate expects a plain model (no correlation features)")
    index = load_index(args.index)
    policy = VotePolicy(
        k=args.k,
        match_mode=MATCH_ALIASES[args.match],
        include_self_vote=not args.no_self_vote,
        min_votes=args.min_votes,
        exclude_verbatim_query=not args.keep_verbatim,
    )
    texts = read_pool(args.infile)
    sentences = [tokenize_raw(t, id=str(i)) for i, t in enumerate(texts)]
    report = calibrator_mod.calibrate_batch(model, index, sentences, policy,
                                            threads=args.threads)
    from .corpus import LabeledSentence

    out = [LabeledSentence(s, tuple(tags)) for s, tags in zip(sentences, report.tags)]
    write_conll(out, args.out)
    _write_sidecar(args.out, config_hash({"model": str(args.model),
                                          "index": str(args.index), "k": args.k,
                                          "match": MATCH_ALIASES[args.match]}))
    if args.trace:
        with open(args.trace, "w", encoding="utf-8", newline="") as fh:
            for tr in report.traces:
                fh.write(json.dumps(tr.to_json(), ensure_ascii=False))
                fh.write("\n")
    log.info(
        "calibrated %d sentences: %d/%d spans re-typed",
        len(out), report.n_reassigned, report.n_spans,
    )
    return 0


def _cmd_eval(args) -> int:
    gold = read_conll(args.gold)
    pred = read_conll(args.pred)
    if len(gold) != len(pred):
        raise ConfigError(
            f"gold and prediction files disagree from sentence index "
            f"{min(len(gold), len(pred))}: {len(gold)} vs {len(pred)} sentences"
        )
    from .corpus import decode_spans, infer_scheme

    gold_spans = [
        decode_spans(ls.tags, infer_scheme([ls.tags]), "strict", ls.sentence.tokens)
        for ls in gold
    ]
    pred_spans = [
        decode_spans(ls.tags, infer_scheme([ls.tags]), "lenient", ls.sentence.tokens)
        for ls in pred
    ]
    report = evaluator_mod.entity_prf(gold_spans, pred_spans)
    digest = config_hash({"gold": str(args.gold), "pred": str(args.pred)})
    payload = report.to_json()
    payload["config_hash"] = digest
    payload["tool_version"] = __version__
    if args.report:
        _write_json(args.report, payload)
    print(
        f"micro P={report.micro.precision:.4f} R={report.micro.recall:.4f} "
        f"F1={report.micro.f1:.4f} | macro P={report.macro.precision:.4f} "
        f"R={report.macro.recall:.4f} F1={report.macro.f1:.4f}"
    )
    return 0


def _build_benchmark(data_cfg: dict) -> Benchmark:
    known = {"train", "dev", "test", "pool", "index"}
    unknown = set(data_cfg) - known
    if unknown:
        raise ConfigError(f"unknown data config keys: {sorted(unknown)}")
    for key in ("train", "dev", "test", "pool"):
        if key not in data_cfg:
            raise ConfigError(f"data config is missing {key!r}")
    pool = read_pool(data_cfg["pool"])
    index = (load_index(data_cfg["index"]) if data_cfg.get("index")
             else build_index(pool))
    return Benchmark(
        train=read_conll(data_cfg["train"]),
        dev=read_conll(data_cfg["dev"]),
        test=read_conll(data_cfg["test"]),
        pool=pool,
        index=index,
    )


def _cmd_sweep(args) -> int:
    cfg = _load_config(args.config)
    known = {"data", "values", "seeds", "methods", "train", "vote", "correlate"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown sweep config keys: {sorted(unknown)}")
    digest = config_hash({"axis": args.axis, **cfg})

    existing = None
    out = Path(args.out)
    if out.exists() and not args.force:
        prev = json.loads(out.read_text(encoding="utf-8"))
        if prev.get("config_hash") == digest:
            existing = evaluator_mod.SweepResult.from_json(prev)

    bench = _build_benchmark(cfg.get("data", {}))
    settings = RunSettings(
        train_config=_train_config(cfg.get("train", {})),
        vote_policy=_vote_policy(cfg.get("vote", {})),
        corr_config=_corr_config(cfg.get("correlate", {})),
    )
    seeds = cfg.get("seeds", list(range(8)))
    values = cfg.get("values")
    methods = tuple(cfg.get("methods", ["plain", "voting"]))
    threads = args.threads

    if args.axis == "fraction":
        result = evaluator_mod.low_resource_sweep(
            bench, values or (1.0, 0.5, 0.2, 0.1, 0.05, 0.03), methods, seeds,
            settings, threads, existing)
    elif args.axis == "k":
        result = evaluator_mod.depth_sweep(
            bench, values or (10, 50, 100), seeds, settings, threads, existing)
    elif args.axis == "pool":
        result = evaluator_mod.pool_sweep(
            bench, values or (0, len(bench.pool)), seeds, settings, methods,
            threads, existing)
    else:  # samples
        result = evaluator_mod.sample_count_sweep(
            bench, values or tuple(range(11)), seeds, settings, threads, existing)

    payload = result.to_json()
    payload["config_hash"] = digest
    payload["tool_version"] = __version__
    _write_json(out, payload)
    log.info("sweep written to %s", out)
    return 0


def _cmd_pipeline(args) -> int:
    cfg = _load_config(args.config)
    known = {"out_dir", "gen", "train", "vote", "correlate", "methods", "seed"}
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"unknown pipeline config keys: {sorted(unknown)}")
    out = Path(cfg.get("out_dir", "pipeline-out"))
    out.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)

    gen_cfg = GenConfig.from_json(cfg.get("gen", {})) if cfg.get("gen") else GenConfig()
    corpus = synthgen_mod.generate(gen_cfg)
    write_conll(corpus.train, out / "train.conll")
    write_conll(corpus.dev, out / "dev.conll")
    write_conll(corpus.test, out / "test.conll")
    write_pool(corpus.pool, out / "pool.txt")

    index = build_index(corpus.pool)
    save_index(index, out / "index")
    bench = Benchmark(train=corpus.train, dev=corpus.dev, test=corpus.test,
                      pool=corpus.pool, index=index)
    settings = RunSettings(
        train_config=_train_config(cfg.get("train", {})),
        vote_policy=_vote_policy(cfg.get("vote", {})),
        corr_config=_corr_config(cfg.get("correlate", {})),
    )
    methods = tuple(cfg.get("methods", ["plain", "voting"]))
    seed = int(cfg.get("seed", 0))
    reports = evaluator_mod.run_point(bench, seed, settings, methods)
    summary = {
        "config_hash": digest,
        "tool_version": __version__,
        "seed": seed,
        "methods": {m: r.to_json() for m, r in reports.items()},
    }
    _write_json(out / "summary.json", summary)
    for m, r in reports.items():
        print(f"{m}: micro F1={r.micro.f1:.4f} macro F1={r.macro.f1:.4f}")
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> _Parser:
    parser = _Parser(prog="corrner", description=__doc__)
    parser.add_argument("--version", action="version", version=f"corrner {__version__}")
    parser.add_argument("--log-level", default=os.environ.get("CORRNER_LOG", "info"),
                        choices=("debug", "info", "warning", "error"))
    parser.add_argument("--threads", type=int, default=0,
                        help="parallel workers (0 = number of cores)")
    parser.add_argument("--force", action="store_true",
                        help="re-run steps whose outputs are already up to date")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="generate the synthetic benchmark")
    p.add_argument("--config", help="GenConfig JSON")
    p.add_argument("--out", required=True)

    p = sub.add_parser("index", help="build or query the retrieval index")
    isub = p.add_subparsers(dest="index_command")
    b = isub.add_parser("build")
    b.add_argument("--pool", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--k1", type=float, default=1.2)
    b.add_argument("--b", type=float, default=0.75)
    b.add_argument("--max-doc-len", type=int, default=512)
    b.add_argument("--dedup", action="store_true")
    q = isub.add_parser("query")
    q.add_argument("--index", required=True)
    q.add_argument("--k", type=int, default=50)
    q.add_argument("--text", required=True)

    p = sub.add_parser("train", help="train the CRF tagger")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--config", help="TrainConfig JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--index")
    p.add_argument("--correlate", action="store_true")
    p.add_argument("--corr-config", help="CorrelatorConfig JSON")

    p = sub.add_parser("tag", help="tag raw text (one per line)")
    p.add_argument("--model", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index")

    p = sub.add_parser("calibrate", help="tag plus majority-vote type calibration")
    p.add_argument("--model", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--match", choices=sorted(MATCH_ALIASES), default="exact")
    p.add_argument("--min-votes", type=int, default=1)
    p.add_argument("--no-self-vote", action="store_true")
    p.add_argument("--keep-verbatim", action="store_true",
                   help="let verbatim copies of the query vote")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")

    p = sub.add_parser("eval", help="entity-level exact-match scores")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report")

    p = sub.add_parser("sweep", help="multi-seed experiment sweeps")
    p.add_argument("--axis", required=True, choices=("fraction", "k", "pool", "samples"))
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pipeline", help="synth -> index -> train -> calibrate -> eval")
    p.add_argument("--config", required=True)

    return parser


def dispatch(argv) -> int:
    argv = list(argv)
    parser = _build_parser()
    # Unknown subcommand: suggest the closest one and fail with a usage error.
    head = next((a for a in argv if not a.startswith("-")), None)
    if head is not None and head not in SUBCOMMANDS:
        close = difflib.get_close_matches(head, SUBCOMMANDS, n=1)
        hint = f" (did you mean {close[0]!r}?)" if close else ""
        print(f"corrner: unknown command {head!r}{hint}", file=sys.stderr)
        return 1

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, args.log_level.upper()),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.threads <= 0:
        args.threads = os.cpu_count() or 1

    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "index":
            if args.index_command == "build":
                return _cmd_index_build(args)
            if args.index_command == "query":
                return _cmd_index_query(args)
            print("corrner index: choose 'build' or 'query'", file=sys.stderr)
            return 1
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "tag":
            return _cmd_tag(args)
        if args.command == "calibrate":
            return _cmd_calibrate(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "pipeline":
            return _cmd_pipeline(args)
        raise AssertionError(f"unhandled command {args.command}")
    except CorrnerError as exc:
        print(f"corrner {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception:  # anything else is a bug: exit 3 with the traceback
        import traceback

        traceback.print_exc(file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
