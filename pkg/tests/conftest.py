import numpy as np
import pytest

from sensorimotor.dataio import load_manifest
from sensorimotor.synthgen import SynthConfig, synth_generate

TINY_SYNTH = SynthConfig(frame_side=56, border=4, min_frames=10, max_frames=14)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """2 subjects x 1 clip/combo = 108 clips, small frames; shared by tests."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    clips = synth_generate(root, n_subjects=2, clips_per_combo=1,
                           cfg=TINY_SYNTH, seed=11)
    return root, clips


@pytest.fixture(scope="session")
def tiny_manifest(tiny_corpus):
    root, _ = tiny_corpus
    return root / "manifest.tsv"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
