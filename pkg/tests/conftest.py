import numpy as np
import pytest

from dcmatch.data import SyntheticConfig, synth_generate


@pytest.fixture(scope="session")
def tiny_bundle_b():
    """Small nonlinear-dependence bundle shared by the cheaper tests."""
    return synth_generate(
        SyntheticConfig(
            scenario="B",
            seed=101,
            classes=8,
            videos_per_class=6,
            frames=4,
            tokens=6,
            channels=12,
            text_dim=8,
        )
    )


@pytest.fixture(scope="session")
def tiny_bundle_a():
    return synth_generate(
        SyntheticConfig(
            scenario="A",
            seed=102,
            classes=8,
            videos_per_class=6,
            frames=4,
            tokens=6,
            channels=12,
            text_dim=8,
        )
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def random_video(rng, frames=4, tokens=5, channels=6, scale=1.0):
    return scale * rng.standard_normal((frames, tokens, channels))
