"""Exact trainable-parameter counts and the canonical structure description.

This module is the engine-side authority on how a config becomes a network:

* 3x3 convs, padding 1, stride 2 when the layer is a ``stride``-style
  downsample point; 2x2 non-overlapping max pool after ``maxpool``-style
  points; conv biases included.
* BN layers (2 trainable parameters per channel) after the conv layers chosen
  by ``place_fractional_layers(n, bn_fraction)``; ReLU after the conv (or its
  BN); dropout after the layers chosen by the dropout fraction.
* Shortcut connections skip two conv layers. The skip path is identity unless
  its endpoints differ in channels or a downsample falls inside the block, in
  which case a bias-free 1x1 projection conv (``c_in * c_out`` parameters,
  strided to match) is inserted.
* Global average pooling, then a single dense softmax classifier.

MLPs: dropout on the input, then ``linear -> relu -> dropout`` per hidden
layer, then the output linear layer. Linear layers count
``(fan_in + 1) * fan_out``.

``structure_lines`` renders this construction as canonical text; its SHA-256
is the structural digest that external evaluators echo back so the engine can
verify they built exactly the requested network.
"""
from __future__ import annotations

import hashlib
import math

from ..configs import (
    Arch,
    CnnArch,
    MlpArch,
    expand_downsampling,
    place_fractional_layers,
    shortcut_blocks,
)


def _cnn_plan(arch: CnnArch, in_channels: int):
    """Per-layer construction facts shared by the counter and the digest."""
    n = len(arch.channels)
    points = expand_downsampling(arch.channels)
    if len(arch.downsample_style) != len(points):
        raise ValueError(
            f"downsample_style has {len(arch.downsample_style)} entries for {len(points)} points"
        )
    style = dict(zip(points, arch.downsample_style))
    bn_set = set(place_fractional_layers(n, arch.bn_fraction))
    drop_set = set(place_fractional_layers(n, arch.dropout_fraction))
    blocks = shortcut_blocks(arch.shortcut_policy, n)

    def c_in(layer: int) -> int:  # channels entering 1-based layer
        return in_channels if layer == 1 else arch.channels[layer - 2]

    shortcuts = []
    for start, end in blocks:
        stride = 1
        if start in style:
            stride *= 2
        if end in style and style[end] == "stride":
            stride *= 2
        cin, cout = c_in(start), arch.channels[end - 1]
        shortcuts.append((start, end, cin, cout, stride, cin != cout or stride != 1))
    return points, style, bn_set, drop_set, shortcuts


def count_params(arch: Arch, in_shape: tuple[int, ...], n_classes: int) -> int:
    """Exact trainable-parameter count of the network a config describes."""
    if isinstance(arch, MlpArch):
        dims = [int(math.prod(in_shape))] + list(arch.hidden_nodes) + [n_classes]
        return sum((a + 1) * b for a, b in zip(dims, dims[1:]))

    if len(in_shape) != 3:
        raise ValueError(f"CNN needs (channels, h, w) input, got shape {in_shape}")
    in_channels = in_shape[0]
    _, _, bn_set, _, shortcuts = _cnn_plan(arch, in_channels)

    total = 0
    prev = in_channels
    for i, c in enumerate(arch.channels, start=1):
        total += 9 * prev * c + c  # 3x3 conv weights + bias
        if i in bn_set:
            total += 2 * c
        prev = c
    for _, _, cin, cout, _, needs_proj in shortcuts:
        if needs_proj:
            total += cin * cout  # 1x1 projection, no bias
    total += arch.channels[-1] * n_classes + n_classes if arch.channels else 0
    return total


def structure_lines(arch: Arch, in_shape: tuple[int, ...], n_classes: int) -> list[str]:
    """Canonical line-by-line structure description (see module docstring)."""
    if isinstance(arch, MlpArch):
        in_dim = int(math.prod(in_shape))
        lines = [f"mlp in={in_dim} classes={n_classes}", f"input_dropout p={arch.drop_prob!r}"]
        prev = in_dim
        for i, h in enumerate(arch.hidden_nodes, start=1):
            lines.append(f"fc i={i} in={prev} out={h}")
            lines.append(f"relu i={i}")
            lines.append(f"dropout i={i} p={arch.drop_prob!r}")
            prev = h
        lines.append(f"fc out in={prev} out={n_classes}")
        return lines

    if len(in_shape) != 3:
        raise ValueError(f"CNN needs (channels, h, w) input, got shape {in_shape}")
    in_channels = in_shape[0]
    points, style, bn_set, drop_set, shortcuts = _cnn_plan(arch, in_channels)
    block_end = {end: (start, cin, cout, stride, proj) for start, end, cin, cout, stride, proj in shortcuts}

    lines = [
        f"cnn in={in_channels}x{in_shape[1]}x{in_shape[2]} classes={n_classes}",
        f"input_dropout p={arch.input_drop_prob!r}",
    ]
    prev = in_channels
    for i, c in enumerate(arch.channels, start=1):
        stride = 2 if i in style and style[i] == "stride" else 1
        lines.append(f"conv i={i} in={prev} out={c} k=3 stride={stride} pad=1")
        if i in bn_set:
            lines.append(f"bn i={i} ch={c}")
        lines.append(f"relu i={i}")
        if i in drop_set:
            lines.append(f"dropout i={i} p={arch.hidden_drop_prob!r}")
        if i in block_end:
            start, cin, cout, s_stride, proj = block_end[i]
            lines.append(
                f"shortcut start={start} end={i} in={cin} out={cout} proj={int(proj)} stride={s_stride}"
            )
        if i in style and style[i] == "maxpool":
            lines.append(f"maxpool i={i} k=2 s=2")
        prev = c
    lines.append("gap")
    lines.append(f"fc in={prev} out={n_classes}")
    return lines


def structure_digest(arch: Arch, in_shape: tuple[int, ...], n_classes: int) -> str:
    """SHA-256 of the canonical structure description."""
    text = "\n".join(structure_lines(arch, in_shape, n_classes))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def conv_work(arch: CnnArch, in_shape: tuple[int, ...]) -> float:
    """Multiply-accumulate count of one forward pass (synthetic cost models)."""
    if len(in_shape) != 3:
        raise ValueError("conv_work needs (channels, h, w) input")
    points, style, _, _, _ = _cnn_plan(arch, in_shape[0])
    h, w = in_shape[1], in_shape[2]
    prev = in_shape[0]
    work = 0.0
    for i, c in enumerate(arch.channels, start=1):
        if i in style and style[i] == "stride":
            h, w = max(1, h // 2), max(1, w // 2)
            work += 9.0 * prev * c * h * w
        else:
            work += 9.0 * prev * c * h * w
        if i in style and style[i] == "maxpool":
            h, w = max(1, h // 2), max(1, w // 2)
        prev = c
    return work
