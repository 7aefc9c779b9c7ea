import sys

import numpy as np
import pytest

leansearch = pytest.importorskip("leansearch", reason="engine package needed as test harness")

from leansearch.configs import CnnArch, Config, MlpArch, TrainingHP, expand_downsampling  # noqa: E402

SERVER = [sys.executable, "-m", "refeval", "serve", "--dataset", "digits"]

FRACTIONS = ("0", "1/4", "1/2", "3/4", "1")
POLICIES = ("none", "every_4th", "every_other")


def random_cnn_arch(rng: np.random.Generator, max_layers: int = 10,
                    first_channels=(16, 64), cap: int = 512) -> CnnArch:
    """Random CNN with full structural variety (fractions, styles, policies)."""
    depth = int(rng.integers(4, max_layers + 1))
    channels = [int(rng.integers(first_channels[0], first_channels[1] + 1))]
    for _ in range(depth - 1):
        lo, hi = channels[-1], min(2 * channels[-1], cap)
        channels.append(int(rng.integers(lo, hi + 1)))
    points = expand_downsampling(channels)
    styles = tuple(rng.choice(["stride", "maxpool"]) for _ in points)
    return CnnArch(
        channels=tuple(channels),
        downsample_style=styles,
        bn_fraction=FRACTIONS[rng.integers(0, len(FRACTIONS))],
        dropout_fraction=FRACTIONS[rng.integers(0, len(FRACTIONS))],
        input_drop_prob=float(rng.choice([0.0, 0.1, 0.2, 0.3])),
        hidden_drop_prob=float(rng.choice([0.15, 0.3, 0.45])),
        shortcut_policy=POLICIES[rng.integers(0, len(POLICIES))],
    )


def random_cnn_config(rng: np.random.Generator, **kwargs) -> Config:
    return Config(random_cnn_arch(rng, **kwargs), TrainingHP(1e-3, 0.0, 256))


def mlp_config(hidden=(50,), drop=0.2, eta=1e-3, lam=0.0, batch=128) -> Config:
    return Config(MlpArch(hidden, drop), TrainingHP(eta, lam, batch))
