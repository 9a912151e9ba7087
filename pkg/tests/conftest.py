import pytest

from services.dataset import generate_synthetic
from services.kiae_model import KiaeConfig, KiaeModel
from services.numerics import make_rng


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def blobs():
    """Small, well separated labelled dataset (n=40, d=6, K=2)."""
    return generate_synthetic("physics_like", n=40, d=6, K=2, separation=8.0, rng=make_rng(3))


@pytest.fixture
def micro_config():
    def build(**overrides):
        options = dict(
            input_dim=3, lstm_hidden=2, fc_dims=(2, 2), repr_dim=2,
            omega1=0.5, omega2=0.5, batch_size=3, epochs=1, seed=0,
        )
        options.update(overrides)
        return KiaeConfig(**options)

    return build


@pytest.fixture
def micro_model(micro_config):
    def build(seed: int = 0, **overrides):
        return KiaeModel.initialize(micro_config(**overrides), make_rng(seed))

    return build


@pytest.fixture
def write_config(tmp_path):
    """Write an experiment config file and return its path."""

    def write(text: str, name: str = "experiment.ini"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
