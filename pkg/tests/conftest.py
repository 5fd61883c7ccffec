"""Shared fixtures. Training fixtures are session-scoped because even the
tiny configs cost seconds, and every consumer treats the results as frozen."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stylescout.encoder import EncoderConfig, Vocab
from stylescout.gail import TrainConfig, train_style_model
from stylescout.schema import load_pools
from stylescout.scout import Registry, StyleModel
from stylescout.synth import SynthSpec, sample_corpus

# small but trainable: separates profiles in under a second per model
FAST_ENCODER = EncoderConfig(d_embed=8, d_model=16, n_layers=1, n_heads=2)
FAST_TRAIN = TrainConfig(seed=0, epochs=14, batch_size=4)


@pytest.fixture(scope="session")
def pools():
    return load_pools()


@pytest.fixture(scope="session")
def vocab(pools):
    return Vocab.from_pools(pools)


@pytest.fixture(scope="session")
def enc_config():
    return EncoderConfig()


@pytest.fixture(scope="session")
def fast_enc():
    return FAST_ENCODER


@pytest.fixture(scope="session")
def tiny_corpus(pools):
    # 5 profiles x 8 train clips, 10 test clips; enough for API-level tests
    spec = SynthSpec.default(seed=5, alpha=1.0, train_per_profile=8, test_per_profile=2)
    return sample_corpus(spec)


@pytest.fixture(scope="session")
def trained_pair(pools, vocab, tiny_corpus):
    """(TrainResult, expert clips) for one pro, cross-player negatives."""
    experts = tiny_corpus.train["entry_rusher"]
    others = [c for name, cs in tiny_corpus.train.items() if name != "entry_rusher" for c in cs]
    result = train_style_model(
        experts,
        others,
        pools=pools,
        vocab=vocab,
        encoder_config=FAST_ENCODER,
        train_config=FAST_TRAIN,
    )
    return result, experts


@pytest.fixture(scope="session")
def tiny_registry(pools, vocab, tiny_corpus):
    """Five quickly trained models over the tiny corpus."""
    reg = Registry()
    for name, experts in tiny_corpus.train.items():
        others = [c for other, cs in tiny_corpus.train.items() if other != name for c in cs]
        result = train_style_model(
            experts,
            others,
            pools=pools,
            vocab=vocab,
            encoder_config=FAST_ENCODER,
            train_config=FAST_TRAIN,
        )
        reg.register(StyleModel.from_training(name, result, pools.version))
    return reg
