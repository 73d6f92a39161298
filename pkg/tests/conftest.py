import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from pdistill.corpus import CorpusSpec, synth_corpus


@pytest.fixture(scope="session")
def small_corpus():
    """16 short clips; enough structure for harness tests."""
    return synth_corpus(CorpusSpec(num_clips=16, clip_length=512, seed=7))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
