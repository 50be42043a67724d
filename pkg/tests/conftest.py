import numpy as np
import pytest
import torch

from anyvc.config import ModelConfig, PrepareConfig
from anyvc.features import SAMPLE_RATE, RawAudio
from anyvc.pipeline import run_prepare
from anyvc.toydata import make_toy_corpus


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    make_toy_corpus(root, n_speakers=4, utterances=4, seed=11, duration=1.2)
    return root


@pytest.fixture(scope="session")
def toy_prepared(tmp_path_factory, toy_corpus):
    out = tmp_path_factory.mktemp("prepared")
    run_prepare(toy_corpus, out, PrepareConfig(seed=3))
    return out


@pytest.fixture
def tiny_config():
    return ModelConfig(content_channels=6, channels=16, layers=2, mel_bins=10,
                       postnet_channels=16)


def sine_audio(freq=220.0, duration=1.0, amplitude=0.5):
    t = np.arange(int(duration * SAMPLE_RATE)) / SAMPLE_RATE
    return RawAudio((amplitude * np.sin(2 * np.pi * freq * t)).astype(np.float32))


@pytest.fixture
def sine():
    return sine_audio()


@pytest.fixture(autouse=True)
def _torch_determinism():
    torch.manual_seed(1234)
