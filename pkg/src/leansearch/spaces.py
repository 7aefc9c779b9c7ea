"""Stage search-space constructors and the unit-cube sampling map.

Both the Sobol prior and the per-step candidate draws sample points in
[0, 1)^D and map them through the same :func:`map_unit_sample` so the two
paths land on identical legal values. Variable-length architectures consume
the first coordinate for depth and the remaining coordinates for per-layer
ratios within each layer's legal interval, so every sample consumes a fixed
number of coordinates and the sequence stays aligned across samples.
"""
from __future__ import annotations

import math

import numpy as np

from .configs import (
    CHANNEL_CAP,
    CnnArch,
    Config,
    HyperParam,
    MlpArch,
    SearchSpace,
    TrainingHP,
    default_training,
    expand_downsampling,
)

LAMBDA_ZERO_EXPONENT = -5  # sampled log10(lambda) below this snaps to lambda = 0


def cnn_stage1_space(
    min_layers: int = 4,
    max_layers: int = 16,
    first_channels: tuple[int, int] = (16, 64),
) -> SearchSpace:
    """Core CNN architecture space: layer count and per-layer channels.

    The number of layers carries no kernel weight: depth differences enter
    the similarity through the per-layer maximum-distance rule instead.
    """
    return SearchSpace(
        stage="stage1",
        family="cnn_arch",
        params=(
            HyperParam("depth", min_layers, max_layers, weight=0.0),
            HyperParam("channels", first_channels[0], first_channels[1], weight=1.0),
        ),
    )


def mlp_stage1_space(
    max_hidden_layers: int = 2,
    nodes: tuple[int, int] = (20, 400),
) -> SearchSpace:
    """Core MLP architecture space: hidden layer count and nodes per layer."""
    return SearchSpace(
        stage="stage1",
        family="mlp_arch",
        params=(
            HyperParam("depth", 0, max_hidden_layers, weight=0.5),
            HyperParam("hidden_nodes", nodes[0], nodes[1], weight=0.5),
        ),
    )


def mlp_stage1_space_large() -> SearchSpace:
    """Preset for larger datasets: 0-3 hidden layers of 50-1000 nodes."""
    return mlp_stage1_space(max_hidden_layers=3, nodes=(50, 1000))


def training_space(
    eta_bounds: tuple[float, float] = (1e-5, 1e-1),
    lambda_bounds: tuple[float, float] = (1e-6, 1e-3),
    batch_bounds: tuple[int, int] = (32, 512),
) -> SearchSpace:
    """Stage-3 combined space over (eta, lambda, batch size).

    eta and lambda are sampled with continuous log10 exponents; lambda
    exponents below ``LAMBDA_ZERO_EXPONENT`` snap to exactly 0.
    """
    return SearchSpace(
        stage="stage3",
        family="training",
        params=(
            HyperParam("eta", eta_bounds[0], eta_bounds[1], scale="log", weight=1 / 3),
            HyperParam("lambda", lambda_bounds[0], lambda_bounds[1], scale="log", weight=1 / 3),
            HyperParam("batch_size", batch_bounds[0], batch_bounds[1], weight=1 / 3),
        ),
    )


# ---------------------------------------------------------------------------
# Unit-cube mapping


def _round_int(x: float) -> int:
    return int(math.floor(x + 0.5))


def _linear_int(u: float, lo: float, hi: float) -> int:
    return _round_int(lo + u * (hi - lo))


def unit_dim(space: SearchSpace) -> int:
    """Number of unit-cube coordinates one sample of this space consumes."""
    if space.family == "training":
        return 3
    return 1 + int(space.param("depth").upper)


def channel_interval(prev: int, cap: int = CHANNEL_CAP) -> tuple[int, int]:
    """Legal channel interval for the layer after one with ``prev`` channels."""
    return prev, min(2 * prev, cap)


def map_unit_sample(space: SearchSpace, u: np.ndarray):
    """Map one point of [0, 1)^D to a legal sample of the space.

    Returns a :class:`CnnArch` / :class:`MlpArch` for architecture spaces and
    a :class:`TrainingHP` for the training space.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (unit_dim(space),):
        raise ValueError(f"expected {unit_dim(space)} coordinates, got {u.shape}")

    if space.family == "training":
        eta_p = space.param("eta")
        lam_p = space.param("lambda")
        batch_p = space.param("batch_size")
        eta_exp = math.log10(eta_p.lower) + u[0] * (math.log10(eta_p.upper) - math.log10(eta_p.lower))
        lam_exp = math.log10(lam_p.lower) + u[1] * (math.log10(lam_p.upper) - math.log10(lam_p.lower))
        lam = 0.0 if lam_exp < LAMBDA_ZERO_EXPONENT else 10.0 ** lam_exp
        batch = _linear_int(u[2], batch_p.lower, batch_p.upper)
        return TrainingHP(eta=10.0 ** eta_exp, lam=lam, batch_size=batch)

    depth_p = space.param("depth")
    depth = _linear_int(u[0], depth_p.lower, depth_p.upper)

    if space.family == "mlp_arch":
        node_p = space.param("hidden_nodes")
        nodes = tuple(
            _linear_int(u[1 + i], node_p.lower, node_p.upper) for i in range(depth)
        )
        return MlpArch(hidden_nodes=nodes, drop_prob=0.2)

    chan_p = space.param("channels")
    channels = [_linear_int(u[1], chan_p.lower, chan_p.upper)]
    for i in range(1, depth):
        lo, hi = channel_interval(channels[-1])
        channels.append(_linear_int(u[1 + i], lo, hi))
    arch = CnnArch(
        channels=tuple(channels),
        downsample_style=("maxpool",) * len(expand_downsampling(channels)),
        bn_fraction=1,
        dropout_fraction=1,
        input_drop_prob=0.3,
        hidden_drop_prob=0.3,
        shortcut_policy="every_other" if depth > 8 else "none",
    )
    return arch


def default_complete(space: SearchSpace, sample) -> Config:
    """Bare completion used when no pipeline presets are supplied."""
    if space.family == "training":
        raise ValueError("training-space sampling needs an explicit completion (frozen architecture)")
    return Config(arch=sample, training=default_training())


def maximal_sample(space: SearchSpace):
    """The highest-complexity sample in the space (used to calibrate c0)."""
    if space.family == "training":
        # Smallest batch maximizes per-epoch work; eta/lambda do not affect cost.
        batch_p = space.param("batch_size")
        return TrainingHP(eta=1e-3, lam=0.0, batch_size=int(batch_p.lower))
    d = unit_dim(space)
    # u -> 1 pushes depth and every per-layer ratio to its upper bound.
    return map_unit_sample(space, np.full(d, 1.0 - 1e-12))
