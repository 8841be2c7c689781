import numpy as np
import pytest

from stnet.embed import EmbedConfig, encode_dataset, train_autoencoder
from stnet.setgen import gen_dataset


@pytest.fixture(scope="session")
def small_ds():
    return gen_dataset(200, 16, seed=3)


@pytest.fixture(scope="session")
def small_embed(small_ds):
    cfg = EmbedConfig(latent_dim=16, resolution=16, enc_hidden=(64,), dec_hidden=(32,), epochs=4,
                      batch_sets=16, batch_points=64, val_points=128, seed=0)
    return train_autoencoder(small_ds, cfg)


@pytest.fixture(scope="session")
def small_latents(small_embed, small_ds):
    return encode_dataset(small_embed, small_ds)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one pass/fail line per acceptance criterion, printed after the run
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    def record(label, passed, detail):
        ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'}  {label}: {detail}")
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
