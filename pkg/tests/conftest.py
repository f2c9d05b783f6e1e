import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from corrner import kernels
from corrner.corpus import LabelSet
from corrner.features import FeatureTemplate, FeatureVocab
from corrner.tagger import CrfModel


@pytest.fixture(params=sorted(kernels.implementations()))
def kernel_impl(request):
    return kernels.implementations()[request.param]


def random_instance(rng, n=None, n_labels=None, scale=1.0):
    n = n if n is not None else int(rng.integers(1, 7))
    L = n_labels if n_labels is not None else int(rng.integers(1, 5))
    em = rng.normal(scale=scale, size=(n, L))
    trans = rng.normal(scale=scale, size=(L, L))
    begin = rng.normal(scale=scale, size=L)
    end = rng.normal(scale=scale, size=L)
    return em, trans, begin, end


def make_random_model(rng, types=("CITY", "PROV"), vocab_strings=None, scale=0.5):
    """A CrfModel with random weights over an explicit tiny vocabulary."""
    label_set = LabelSet(types=tuple(types), scheme="BIOES")
    templates = (
        FeatureTemplate("token-unigram"),
        FeatureTemplate("token-window", offset=-1),
        FeatureTemplate("token-window", offset=1),
    )
    if vocab_strings is None:
        alphabet = "甲乙丙丁"
        vocab_strings = [f"U0={c}" for c in alphabet]
        vocab_strings += [f"U-1={c}" for c in list(alphabet) + ["<BOS>"]]
        vocab_strings += [f"U1={c}" for c in list(alphabet) + ["<EOS>"]]
    vocab = FeatureVocab(vocab_strings)
    L = len(label_set.tags)
    return CrfModel(
        label_set=label_set,
        templates=templates,
        vocab=vocab,
        w_emit=rng.normal(scale=scale, size=(len(vocab), L)),
        w_trans=rng.normal(scale=scale, size=(L, L)),
        w_begin=rng.normal(scale=scale, size=L),
        w_end=rng.normal(scale=scale, size=L),
    )
