"""Build executable networks from flat config encodings.

The construction contract (shared with the engine, which verifies it through
the structural digest and exact parameter counts):

* 3x3 convs with padding 1 and bias; stride 2 in layers that are
  ``stride``-style downsample points; 2x2 max pool after ``maxpool``-style
  points. Downsample points are the layers whose channel count last precedes
  a crossing of 64 / 128 / 256.
* Batch norm (affine) after the conv layers selected by the BN fraction,
  ReLU after the conv or its BN, dropout after the layers selected by the
  dropout fraction; placement is back-loaded: index ceil(n*j/m) for j=1..m
  with m = round(fraction * n).
* Shortcut connections skip two conv layers, starting at layer 1 (every
  other block, or every 4th). The skip path joins after the end layer's
  dropout, before any pool that follows it; it is an identity unless the
  endpoint channels differ or a downsample falls inside the block, in which
  case a bias-free 1x1 conv (strided to match) projects it.
* Global average pooling, then one dense softmax classifier.
* MLPs: dropout on the (flattened) input, then linear -> ReLU -> dropout per
  hidden layer, then the output linear layer.

The digest is the SHA-256 of canonical structure lines derived from the
*instantiated* modules' attributes, so it reflects what was actually built.
"""
from __future__ import annotations

import hashlib
from fractions import Fraction

import torch
from torch import nn

DOWNSAMPLE_THRESHOLDS = (64, 128, 256)


class ConfigFormatError(ValueError):
    """The flat config encoding could not be interpreted."""


def parse_int_list(value: str) -> tuple[int, ...]:
    value = value.strip()
    if not value:
        return ()
    try:
        return tuple(int(part) for part in value.split(","))
    except ValueError as exc:
        raise ConfigFormatError(f"bad integer list {value!r}") from exc


def parse_str_list(value: str) -> tuple[str, ...]:
    value = value.strip()
    if not value:
        return ()
    return tuple(part.strip() for part in value.split(","))


def downsample_points(channels) -> tuple[int, ...]:
    points = []
    for threshold in DOWNSAMPLE_THRESHOLDS:
        for i in range(1, len(channels)):
            if channels[i - 1] <= threshold < channels[i]:
                points.append(i)
                break
    return tuple(sorted(set(points)))


def placement(n_layers: int, fraction: Fraction) -> tuple[int, ...]:
    m = int(fraction * n_layers + Fraction(1, 2))
    if m <= 0:
        return ()
    return tuple(sorted({-(-n_layers * j // m) for j in range(1, m + 1)}))


def skip_blocks(policy: str, n_layers: int) -> tuple[tuple[int, int], ...]:
    if policy == "none":
        return ()
    if policy not in ("every_other", "every_4th"):
        raise ConfigFormatError(f"unknown shortcut policy {policy!r}")
    step = 2 if policy == "every_other" else 4
    return tuple((s, s + 1) for s in range(1, n_layers, step) if s + 1 <= n_layers)


def _he_init(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.Linear)):
        nn.init.kaiming_normal_(module.weight, nonlinearity="relu")
        if module.bias is not None:
            nn.init.constant_(module.bias, 0.1)


class CnnNet(nn.Module):
    def __init__(self, config: dict, in_shape: tuple[int, int, int], n_classes: int):
        super().__init__()
        channels = parse_int_list(config["channels"])
        if not channels:
            raise ConfigFormatError("CNN config has no conv layers")
        styles = parse_str_list(config["downsample_style"])
        points = downsample_points(channels)
        if len(styles) != len(points):
            raise ConfigFormatError(
                f"downsample_style has {len(styles)} entries for {len(points)} points")
        for style in styles:
            if style not in ("stride", "maxpool"):
                raise ConfigFormatError(f"unknown downsample style {style!r}")
        style_at = dict(zip(points, styles))
        n = len(channels)
        bn_set = set(placement(n, Fraction(config["bn_fraction"])))
        drop_set = set(placement(n, Fraction(config["dropout_fraction"])))
        input_p = float(config["input_drop_prob"])
        hidden_p = float(config["hidden_drop_prob"])
        blocks = skip_blocks(config["shortcut_policy"], n)

        self.in_shape = in_shape
        self.n_classes = n_classes
        self.input_dropout = nn.Dropout(input_p)
        self.convs = nn.ModuleList()
        self.bns = nn.ModuleDict()
        self.drops = nn.ModuleDict()
        self.pools = nn.ModuleDict()
        self.projections = nn.ModuleDict()
        self.block_start_of_end: dict[int, int] = {}
        self.block_starts = set()

        prev = in_shape[0]
        per_layer_stride = {}
        for i, c in enumerate(channels, start=1):
            stride = 2 if style_at.get(i) == "stride" else 1
            per_layer_stride[i] = stride
            self.convs.append(nn.Conv2d(prev, c, kernel_size=3, stride=stride, padding=1))
            if i in bn_set:
                self.bns[str(i)] = nn.BatchNorm2d(c)
            if i in drop_set:
                self.drops[str(i)] = nn.Dropout(hidden_p)
            if style_at.get(i) == "maxpool":
                self.pools[str(i)] = nn.MaxPool2d(kernel_size=2, stride=2)
            prev = c

        def c_in(layer: int) -> int:
            return in_shape[0] if layer == 1 else channels[layer - 2]

        for start, end in blocks:
            self.block_starts.add(start)
            self.block_start_of_end[end] = start
            stride = 1
            if start in style_at:
                stride *= 2
            if end in style_at and style_at[end] == "stride":
                stride *= 2
            cin, cout = c_in(start), channels[end - 1]
            if cin != cout or stride != 1:
                self.projections[str(end)] = nn.Conv2d(cin, cout, kernel_size=1,
                                                       stride=stride, bias=False)
        self.classifier = nn.Linear(channels[-1], n_classes)
        self.apply(_he_init)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = self.input_dropout(x)
        saved: dict[int, torch.Tensor] = {}
        for i, conv in enumerate(self.convs, start=1):
            if i in self.block_starts:
                saved[i] = x
            x = conv(x)
            key = str(i)
            if key in self.bns:
                x = self.bns[key](x)
            x = torch.relu(x)
            if key in self.drops:
                x = self.drops[key](x)
            if i in self.block_start_of_end:
                shortcut = saved.pop(self.block_start_of_end[i])
                if key in self.projections:
                    shortcut = self.projections[key](shortcut)
                x = x + shortcut
            if key in self.pools:
                x = self.pools[key](x)
        x = x.mean(dim=(2, 3))  # global average pooling
        return self.classifier(x)

    def structure_lines(self) -> list[str]:
        c, h, w = self.in_shape
        lines = [f"cnn in={c}x{h}x{w} classes={self.n_classes}",
                 f"input_dropout p={self.input_dropout.p!r}"]
        for i, conv in enumerate(self.convs, start=1):
            key = str(i)
            lines.append(f"conv i={i} in={conv.in_channels} out={conv.out_channels} "
                         f"k=3 stride={conv.stride[0]} pad=1")
            if key in self.bns:
                lines.append(f"bn i={i} ch={self.bns[key].num_features}")
            lines.append(f"relu i={i}")
            if key in self.drops:
                lines.append(f"dropout i={i} p={self.drops[key].p!r}")
            if i in self.block_start_of_end:
                start = self.block_start_of_end[i]
                if key in self.projections:
                    proj = self.projections[key]
                    lines.append(f"shortcut start={start} end={i} in={proj.in_channels} "
                                 f"out={proj.out_channels} proj=1 stride={proj.stride[0]}")
                else:
                    ch = self.convs[i - 1].out_channels
                    lines.append(f"shortcut start={start} end={i} in={ch} out={ch} "
                                 f"proj=0 stride=1")
            if key in self.pools:
                lines.append(f"maxpool i={i} k=2 s=2")
        lines.append("gap")
        lines.append(f"fc in={self.classifier.in_features} out={self.classifier.out_features}")
        return lines


class MlpNet(nn.Module):
    def __init__(self, config: dict, in_shape: tuple[int, ...], n_classes: int):
        super().__init__()
        hidden = parse_int_list(config["hidden_nodes"])
        p = float(config["drop_prob"])
        in_dim = 1
        for d in in_shape:
            in_dim *= d
        self.in_dim = in_dim
        self.n_classes = n_classes
        self.input_dropout = nn.Dropout(p)
        self.hidden = nn.ModuleList()
        self.drops = nn.ModuleList()
        prev = in_dim
        for nodes in hidden:
            self.hidden.append(nn.Linear(prev, nodes))
            self.drops.append(nn.Dropout(p))
            prev = nodes
        self.out = nn.Linear(prev, n_classes)
        self.apply(_he_init)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x.reshape(x.shape[0], -1)
        x = self.input_dropout(x)
        for linear, drop in zip(self.hidden, self.drops):
            x = drop(torch.relu(linear(x)))
        return self.out(x)

    def structure_lines(self) -> list[str]:
        lines = [f"mlp in={self.in_dim} classes={self.n_classes}",
                 f"input_dropout p={self.input_dropout.p!r}"]
        for i, (linear, drop) in enumerate(zip(self.hidden, self.drops), start=1):
            lines.append(f"fc i={i} in={linear.in_features} out={linear.out_features}")
            lines.append(f"relu i={i}")
            lines.append(f"dropout i={i} p={drop.p!r}")
        lines.append(f"fc out in={self.out.in_features} out={self.out.out_features}")
        return lines


def build_network(config: dict, in_shape: tuple[int, ...], n_classes: int) -> nn.Module:
    kind = config.get("kind")
    if kind == "cnn":
        if len(in_shape) != 3:
            raise ConfigFormatError(f"CNN needs (channels, h, w) input, got {in_shape}")
        return CnnNet(config, in_shape, n_classes)
    if kind == "mlp":
        return MlpNet(config, in_shape, n_classes)
    raise ConfigFormatError(f"unknown config kind {kind!r}")


def n_params(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def structure_digest(model) -> str:
    text = "\n".join(model.structure_lines())
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
