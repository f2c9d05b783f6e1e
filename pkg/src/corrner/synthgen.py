"""Deterministic generator of a correlated, ambiguous, address-like benchmark.

A five-level gazetteer (province, city, district, town, point-of-interest)
is built from a syllable inventory, with a controlled fraction of names
deliberately shared across adjacent levels so that a suffix-dropped mention
is genuinely ambiguous. Labeled sentences are renderings of root-to-leaf
paths (levels may be skipped, suffixes dropped, numeric detail appended);
the unlabeled pool contains, for every labeled location, its full-suffix
rendering plus extra variants, alongside distractor renderings of other
paths. Everything is a pure function of the config seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import EntitySpan, LabeledSentence, Sentence, encode_tags
from .errors import ConfigError

LEVELS = ("PROV", "CITY", "DISTRICT", "TOWN", "POI")
LEVEL_SUFFIXES = {"PROV": "省", "CITY": "市", "DISTRICT": "县", "TOWN": "镇"}
POI_SUFFIXES = ("路", "街", "站")

# Name syllables. Deliberately excludes every suffix character so level
# markers never occur inside a name.
SYLLABLES = (
    "安宝北长春达东方福高关海河湖华吉佳江金京景康乐林岭龙明南宁平青清泉仁山上沙石双松台天通万文武西溪下祥新兴雅延阳伊银永余玉元月云泽哲真中州庄紫孟白城赉洮榆潭汇丰源口桥湾坡岗塘田园林官渡营盘集"
)


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    level_sizes: tuple[int, ...] = (10, 30, 80, 220, 2000)
    ambiguity_rate: float = 0.25
    suffix_drop_rate: float = 0.4
    level_skip_rate: float = 0.25
    n_train: int = 600
    n_dev: int = 150
    n_test: int = 300
    n_unlabeled: int = 100_000
    noise_rate: float = 0.1
    variants_per_location: int = 3
    distractor_rate: float = 0.5
    guarantee_correlated: bool = True

    def __post_init__(self):
        if len(self.level_sizes) != len(LEVELS):
            raise ConfigError(f"level_sizes needs {len(LEVELS)} entries")
        if any(s < 1 for s in self.level_sizes):
            raise ConfigError("level sizes must be >= 1")
        for name in ("ambiguity_rate", "suffix_drop_rate", "level_skip_rate",
                     "noise_rate", "distractor_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if min(self.n_train, self.n_dev, self.n_test) < 1 or self.n_unlabeled < 0:
            raise ConfigError("split sizes must be >= 1 and pool size >= 0")

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "level_sizes": list(self.level_sizes),
            "ambiguity_rate": self.ambiguity_rate,
            "suffix_drop_rate": self.suffix_drop_rate,
            "level_skip_rate": self.level_skip_rate,
            "n_train": self.n_train,
            "n_dev": self.n_dev,
            "n_test": self.n_test,
            "n_unlabeled": self.n_unlabeled,
            "noise_rate": self.noise_rate,
            "variants_per_location": self.variants_per_location,
            "distractor_rate": self.distractor_rate,
            "guarantee_correlated": self.guarantee_correlated,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GenConfig":
        obj = dict(obj)
        if "level_sizes" in obj:
            obj["level_sizes"] = tuple(obj["level_sizes"])
        return cls(**obj)


@dataclass(frozen=True)
class Gazetteer:
    inventories: dict[str, tuple[str, ...]]
    parents: dict[str, dict[str, str]]  # level -> child name -> parent name
    suffixes: dict[str, dict[str, str]]  # level -> name -> suffix
    ambiguous: dict[str, tuple[str, ...]]  # "CITY|PROV" -> shared names

    @property
    def levels(self) -> tuple[str, ...]:
        return LEVELS

    def path_for(self, poi: str) -> tuple[str, ...]:
        names = [poi]
        for level_idx in range(len(LEVELS) - 1, 0, -1):
            names.append(self.parents[LEVELS[level_idx]][names[-1]])
        return tuple(reversed(names))

    def all_paths(self) -> list[tuple[str, ...]]:
        return [self.path_for(p) for p in self.inventories["POI"]]

    def to_json(self) -> dict:
        return {
            "levels": list(LEVELS),
            "inventories": {k: list(v) for k, v in self.inventories.items()},
            "parents": self.parents,
            "suffixes": self.suffixes,
            "ambiguous": {k: list(v) for k, v in self.ambiguous.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Gazetteer":
        return cls(
            inventories={k: tuple(v) for k, v in obj["inventories"].items()},
            parents=obj["parents"],
            suffixes=obj["suffixes"],
            ambiguous={k: tuple(v) for k, v in obj["ambiguous"].items()},
        )


def _new_name(rng, length: int, taken: set[str]) -> str:
    syl = SYLLABLES
    for _ in range(10_000):
        name = "".join(syl[rng.integers(0, len(syl))] for _ in range(length))
        if name not in taken:
            return name
    raise ConfigError("syllable inventory exhausted; reduce level sizes")


def generate_gazetteer(config: GenConfig) -> Gazetteer:
    """Build inventories, the name forest, and the cross-level ambiguity map."""
    rng = np.random.default_rng([config.seed, 0])
    inventories: dict[str, tuple[str, ...]] = {}
    parents: dict[str, dict[str, str]] = {}
    suffixes: dict[str, dict[str, str]] = {}
    ambiguous: dict[str, tuple[str, ...]] = {}
    taken: set[str] = set()
    already_shared: set[str] = set()

    for idx, level in enumerate(LEVELS):
        size = config.level_sizes[idx]
        names: list[str] = []
        if idx > 0 and config.ambiguity_rate > 0:
            parent_names = [
                n for n in inventories[LEVELS[idx - 1]] if n not in already_shared
            ]
            # the shareable budget is bounded by the smaller inventory
            n_amb = int(round(config.ambiguity_rate * min(size, len(inventories[LEVELS[idx - 1]]))))
            if n_amb > len(parent_names):
                raise ConfigError(
                    f"{level}: {n_amb} ambiguous names requested but only "
                    f"{len(parent_names)} parent names are available"
                )
            if n_amb:
                picked = rng.choice(len(parent_names), size=n_amb, replace=False)
                shared = [parent_names[i] for i in np.sort(picked)]
                names.extend(shared)
                already_shared.update(shared)
                ambiguous[f"{LEVELS[idx - 1]}|{level}"] = tuple(shared)
        while len(names) < size:
            length = 2 if level != "POI" else int(2 + (rng.random() < 0.35))
            names.append(_new_name(rng, length, taken))
            taken.add(names[-1])
        taken.update(names)
        inventories[level] = tuple(names)

        if idx > 0:
            parent_inv = inventories[LEVELS[idx - 1]]
            parents[level] = {
                name: parent_inv[int(rng.integers(0, len(parent_inv)))]
                for name in names
            }
        if level == "POI":
            suffixes[level] = {
                name: POI_SUFFIXES[int(rng.integers(0, len(POI_SUFFIXES)))]
                for name in names
            }
        else:
            suffixes[level] = {name: LEVEL_SUFFIXES[level] for name in names}

    return Gazetteer(
        inventories=inventories, parents=parents, suffixes=suffixes, ambiguous=ambiguous
    )


def render_path(
    gazetteer: Gazetteer, path: Sequence[str], rng, config: GenConfig,
    full: bool = False,
) -> tuple[str, list[EntitySpan]]:
    """One surface rendering of a root-to-leaf path with its gold spans.

    `full` forces every level, every suffix, and no noise — the canonical
    correlated form the pool guarantees for labeled locations.
    """
    chars: list[str] = []
    spans: list[EntitySpan] = []
    for idx, (level, name) in enumerate(zip(LEVELS, path)):
        is_leaf = idx == len(LEVELS) - 1
        if not full and not is_leaf and rng.random() < config.level_skip_rate:
            continue
        keep_suffix = full or rng.random() >= config.suffix_drop_rate
        surface = name + gazetteer.suffixes[level][name] if keep_suffix else name
        start = len(chars)
        chars.extend(surface)
        spans.append(EntitySpan(start, len(chars), level, surface))
    if not full and rng.random() < config.noise_rate:
        detail = str(rng.integers(1, 1000)) + "号"
        chars.extend(detail)
    return "".join(chars), spans


def _labeled(text: str, spans: list[EntitySpan], sid: str) -> LabeledSentence:
    tags = encode_tags(spans, len(text), "BIOES")
    return LabeledSentence(Sentence(tuple(text), id=sid), tuple(tags))


@dataclass
class SynthCorpus:
    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    test: list[LabeledSentence]
    pool: list[str]
    gazetteer: Gazetteer
    labeled_paths: dict[str, list[tuple[str, ...]]] = field(default_factory=dict)


def generate_corpus(gazetteer: Gazetteer, config: GenConfig) -> SynthCorpus:
    """Render disjoint train/dev/test splits and the correlated pool."""
    rng = np.random.default_rng([config.seed, 1])
    paths = gazetteer.all_paths()
    n_labeled = config.n_train + config.n_dev + config.n_test
    if n_labeled > len(paths):
        raise ConfigError(
            f"{n_labeled} labeled sentences requested but the gazetteer has "
            f"only {len(paths)} root-to-leaf paths"
        )
    order = rng.permutation(len(paths))
    chosen = [paths[i] for i in order[:n_labeled]]

    rendered: set[str] = set()
    sentences: list[LabeledSentence] = []
    kept_paths: list[tuple[str, ...]] = []
    for i, path in enumerate(chosen):
        text = spans = None
        for _ in range(20):
            text, spans = render_path(gazetteer, path, rng, config)
            if text not in rendered:
                break
        else:
            text, spans = render_path(gazetteer, path, rng, config, full=True)
            if text in rendered:
                continue  # full form already used elsewhere; drop this path
        rendered.add(text)
        sentences.append(_labeled(text, spans, str(i)))
        kept_paths.append(path)
    if len(sentences) < n_labeled:
        raise ConfigError(
            "could not render enough distinct labeled sentences; "
            "enlarge the gazetteer or lower the split sizes"
        )

    splits = {
        "train": (sentences[: config.n_train], kept_paths[: config.n_train]),
        "dev": (
            sentences[config.n_train : config.n_train + config.n_dev],
            kept_paths[config.n_train : config.n_train + config.n_dev],
        ),
        "test": (
            sentences[config.n_train + config.n_dev :],
            kept_paths[config.n_train + config.n_dev :],
        ),
    }

    pool: list[str] = []
    if config.guarantee_correlated:
        if config.n_unlabeled < len(kept_paths):
            raise ConfigError(
                f"pool size {config.n_unlabeled} cannot guarantee one "
                f"correlated rendering for each of {len(kept_paths)} locations"
            )
        for path in kept_paths:
            pool.append(render_path(gazetteer, path, rng, config, full=True)[0])
    for path in kept_paths:
        if len(pool) >= config.n_unlabeled:
            break
        for _ in range(config.variants_per_location):
            if len(pool) >= config.n_unlabeled:
                break
            pool.append(render_path(gazetteer, path, rng, config)[0])
    while len(pool) < config.n_unlabeled:
        if rng.random() < config.distractor_rate:
            path = paths[int(rng.integers(0, len(paths)))]
        else:
            path = kept_paths[int(rng.integers(0, len(kept_paths)))]
        pool.append(render_path(gazetteer, path, rng, config)[0])

    return SynthCorpus(
        train=splits["train"][0],
        dev=splits["dev"][0],
        test=splits["test"][0],
        pool=pool,
        gazetteer=gazetteer,
        labeled_paths={k: v for k, (_, v) in splits.items()},
    )


def generate(config: GenConfig) -> SynthCorpus:
    return generate_corpus(generate_gazetteer(config), config)


def save_gazetteer(gazetteer: Gazetteer, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(gazetteer.to_json(), fh, ensure_ascii=False, separators=(",", ":"))
        fh.write("\n")


def load_gazetteer(path) -> Gazetteer:
    with open(path, encoding="utf-8") as fh:
        return Gazetteer.from_json(json.load(fh))
