"""Network configuration types, search spaces, and deterministic expansion rules.

A :class:`Config` couples an architecture description (CNN or MLP) with
training hyperparameters. Architectures are descriptions only: layer counts,
channel/node widths, and the placement rules for batch norm, dropout,
downsampling and shortcut connections. Nothing here allocates weights.

The flat text encoding produced by :func:`encode_config` is the canonical
external representation: it is what goes into trace files and over the wire
protocol, one ``key = value`` line per field, lists comma-separated, field
order fixed per architecture kind. ``decode_config(encode_config(c)) == c``
holds bit-exactly for every field.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Union

DOWNSAMPLE_THRESHOLDS = (64, 128, 256)
DOWNSAMPLE_STYLES = ("stride", "maxpool")
SHORTCUT_POLICIES = ("none", "every_4th", "every_other")
# Valid placement fractions. Stage-2 grids use the first four; Stage-1 presets use 1.
FRACTION_GRID = (Fraction(0), Fraction(1, 4), Fraction(1, 2), Fraction(3, 4), Fraction(1))
STAGE2_FRACTIONS = FRACTION_GRID[:4]

CHANNEL_CAP = 512
MAX_CHANNEL_GROWTH = 2
BATCH_BOUNDS = (32, 512)


class ConfigError(ValueError):
    """Raised on malformed encodings or structurally impossible configs."""


def _as_fraction(value) -> Fraction:
    frac = Fraction(value)
    return frac


@dataclass(frozen=True)
class CnnArch:
    """Convolutional architecture: 3x3 convs, GAP, softmax classifier.

    ``channels`` is one entry per conv layer. ``downsample_style`` has one
    entry per downsample point (see :func:`expand_downsampling`), each either
    ``stride`` (stride-2 in that conv) or ``maxpool`` (2x2 pool after it).
    ``bn_fraction`` / ``dropout_fraction`` select how many conv layers get a
    BN / dropout layer via :func:`place_fractional_layers`.
    """

    channels: tuple[int, ...]
    downsample_style: tuple[str, ...]
    bn_fraction: Fraction
    dropout_fraction: Fraction
    input_drop_prob: float
    hidden_drop_prob: float
    shortcut_policy: str

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "downsample_style", tuple(str(s) for s in self.downsample_style))
        object.__setattr__(self, "bn_fraction", _as_fraction(self.bn_fraction))
        object.__setattr__(self, "dropout_fraction", _as_fraction(self.dropout_fraction))


@dataclass(frozen=True)
class MlpArch:
    """Fully-connected architecture; ``hidden_nodes`` may be empty."""

    hidden_nodes: tuple[int, ...]
    drop_prob: float

    def __post_init__(self):
        object.__setattr__(self, "hidden_nodes", tuple(int(n) for n in self.hidden_nodes))


Arch = Union[CnnArch, MlpArch]


@dataclass(frozen=True)
class TrainingHP:
    """Training hyperparameters; ``eta`` is the initial learning rate.

    Trainers always decay eta by 0.2x at the 1/2 and 3/4 points of training.
    ``lam`` is the (decoupled) weight-decay coefficient, 0 meaning none.
    """

    eta: float
    lam: float
    batch_size: int

    def __post_init__(self):
        object.__setattr__(self, "eta", float(self.eta))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "batch_size", int(self.batch_size))


@dataclass(frozen=True)
class Config:
    arch: Arch
    training: TrainingHP

    @property
    def kind(self) -> str:
        return "cnn" if isinstance(self.arch, CnnArch) else "mlp"


def default_training() -> TrainingHP:
    """Preset used during Stages 1-2 (lam is filled in per-config by the pipeline)."""
    return TrainingHP(eta=1e-3, lam=0.0, batch_size=256)


# ---------------------------------------------------------------------------
# Deterministic expansion rules


def expand_downsampling(channels) -> tuple[int, ...]:
    """1-based indices of the conv layers followed by a downsampling op.

    Each threshold in ``DOWNSAMPLE_THRESHOLDS`` that the (non-decreasing)
    channel sequence crosses contributes the index of the last layer before
    the crossing; the op itself (stride-2 in that layer, or a pool after it)
    sits between that layer and the next. Thresholds never crossed contribute
    nothing.
    """
    channels = tuple(channels)
    points = []
    for threshold in DOWNSAMPLE_THRESHOLDS:
        for i in range(1, len(channels)):
            if channels[i - 1] <= threshold < channels[i]:
                points.append(i)
                break
    return tuple(sorted(set(points)))


def place_fractional_layers(n_conv: int, fraction) -> tuple[int, ...]:
    """1-based conv-layer indices receiving a BN (or dropout) layer.

    ``m = round(fraction * n_conv)`` layers are chosen, spaced from the back
    so later layers are preferred: index ``ceil(n*j/m)`` for ``j = 1..m``.
    Rounding of ``fraction * n_conv`` is half-up, done in exact arithmetic.
    """
    frac = Fraction(fraction)
    if not 0 <= frac <= 1:
        raise ConfigError(f"fraction {frac} outside [0, 1]")
    m = int(frac * n_conv + Fraction(1, 2))
    if m <= 0:
        return ()
    return tuple(sorted({-(-n_conv * j // m) for j in range(1, m + 1)}))


def shortcut_blocks(policy: str, n_conv: int) -> tuple[tuple[int, int], ...]:
    """(start, end) 1-based layer pairs spanned by skip connections.

    Every connection skips over two conv layers. ``every_other`` starts a
    block at layers 1, 3, 5, ...; ``every_4th`` at 1, 5, 9, ...; blocks must
    fit entirely inside the network.
    """
    if policy == "none":
        return ()
    step = 2 if policy == "every_other" else 4
    if policy not in SHORTCUT_POLICIES:
        raise ConfigError(f"unknown shortcut policy {policy!r}")
    return tuple((s, s + 1) for s in range(1, n_conv, step) if s + 1 <= n_conv)


# ---------------------------------------------------------------------------
# Search spaces


@dataclass(frozen=True)
class HyperParam:
    """Bounds plus kernel metadata for one searched hyperparameter.

    ``lower``/``upper`` bound the sampled values (per-layer values for the
    variable-length ``channels`` and ``hidden_nodes`` entries). ``omega`` and
    ``ramp_power`` parameterize the ramp distance; ``weight`` is this
    hyperparameter's share s_k of the similarity kernel's convex combination.
    """

    name: str
    lower: float
    upper: float
    scale: str = "linear"  # "linear" | "log"
    omega: float = 3.0
    ramp_power: float = 1.0
    weight: float = 0.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigError(f"{self.name}: lower {self.lower} must be < upper {self.upper}")
        if self.scale not in ("linear", "log"):
            raise ConfigError(f"{self.name}: unknown scale {self.scale!r}")
        if self.omega <= 0:
            raise ConfigError(f"{self.name}: omega must be positive")
        if not 0 < self.ramp_power <= 1:
            raise ConfigError(f"{self.name}: ramp power must be in (0, 1]")
        if self.weight < 0:
            raise ConfigError(f"{self.name}: weight must be non-negative")


@dataclass(frozen=True)
class SearchSpace:
    """One stage's searchable hyperparameters.

    ``family`` selects the sampling/validation rules: ``cnn_arch`` and
    ``mlp_arch`` describe Stage-1 core-architecture spaces, ``training`` the
    Stage-3 space over (eta, lambda, batch size).
    """

    stage: str
    family: str  # "cnn_arch" | "mlp_arch" | "training"
    params: tuple[HyperParam, ...]

    def __post_init__(self):
        if self.family not in ("cnn_arch", "mlp_arch", "training"):
            raise ConfigError(f"unknown space family {self.family!r}")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate hyperparameter names")
        total = sum(p.weight for p in self.params)
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"kernel weights must sum to 1, got {total}")

    def param(self, name: str) -> HyperParam:
        for p in self.params:
            if p.name == name:
                return p
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Validation


def _validate_cnn(arch: CnnArch, space: SearchSpace, out: list[str]) -> None:
    depth = space.param("depth")
    chan = space.param("channels")
    n = len(arch.channels)
    if not depth.lower <= n <= depth.upper:
        out.append(f"conv layer count {n} outside [{int(depth.lower)}, {int(depth.upper)}]")
    if n == 0:
        return
    first = arch.channels[0]
    if not chan.lower <= first <= chan.upper:
        out.append(f"first layer channels {first} outside [{int(chan.lower)}, {int(chan.upper)}]")
    for i in range(1, n):
        prev, cur = arch.channels[i - 1], arch.channels[i]
        if cur < prev:
            out.append(f"channels decrease at layer {i + 1} ({prev} -> {cur})")
        if cur > MAX_CHANNEL_GROWTH * prev:
            out.append(f"channel more than doubles at layer {i + 1} ({prev} -> {cur})")
        if cur > CHANNEL_CAP:
            out.append(f"channels exceed cap {CHANNEL_CAP} at layer {i + 1}")
    points = expand_downsampling(arch.channels)
    if len(arch.downsample_style) != len(points):
        out.append(
            f"downsample_style has {len(arch.downsample_style)} entries, "
            f"expected {len(points)} (points {points})"
        )
    for style in arch.downsample_style:
        if style not in DOWNSAMPLE_STYLES:
            out.append(f"unknown downsample style {style!r}")
    if arch.bn_fraction not in FRACTION_GRID:
        out.append(f"bn_fraction {arch.bn_fraction} not in {FRACTION_GRID}")
    if arch.dropout_fraction not in FRACTION_GRID:
        out.append(f"dropout_fraction {arch.dropout_fraction} not in {FRACTION_GRID}")
    for label, p in (("input_drop_prob", arch.input_drop_prob), ("hidden_drop_prob", arch.hidden_drop_prob)):
        if not 0 <= p < 1:
            out.append(f"{label} {p} outside [0, 1)")
    if arch.shortcut_policy not in SHORTCUT_POLICIES:
        out.append(f"unknown shortcut policy {arch.shortcut_policy!r}")


def _validate_mlp(arch: MlpArch, space: SearchSpace, out: list[str]) -> None:
    depth = space.param("depth")
    nodes = space.param("hidden_nodes")
    n = len(arch.hidden_nodes)
    if not depth.lower <= n <= depth.upper:
        out.append(f"hidden layer count {n} outside [{int(depth.lower)}, {int(depth.upper)}]")
    for i, h in enumerate(arch.hidden_nodes):
        if not nodes.lower <= h <= nodes.upper:
            out.append(f"hidden layer {i + 1} nodes {h} outside [{int(nodes.lower)}, {int(nodes.upper)}]")
    if not 0 <= arch.drop_prob < 1:
        out.append(f"drop_prob {arch.drop_prob} outside [0, 1)")


def _validate_training(hp: TrainingHP, space: SearchSpace | None, out: list[str]) -> None:
    lo, hi = BATCH_BOUNDS
    if space is not None and space.family == "training":
        batch = space.param("batch_size")
        lo, hi = int(batch.lower), int(batch.upper)
    if hp.batch_size < lo:
        out.append(f"batch size below lower bound {lo}")
    elif hp.batch_size > hi:
        out.append(f"batch size above upper bound {hi}")
    if not hp.eta > 0:
        out.append(f"eta {hp.eta} must be positive")
    if hp.lam < 0:
        out.append(f"lambda {hp.lam} must be non-negative")


def validate(config: Config, space: SearchSpace) -> list[str]:
    """Return a list of human-readable invariant violations (empty means ok).

    Architecture invariants are checked against the given space when it is an
    architecture space; training fields are always checked (against the space
    bounds for a training space, otherwise the global batch bounds).
    """
    out: list[str] = []
    if space.family == "cnn_arch":
        if not isinstance(config.arch, CnnArch):
            out.append("config is not a CNN config")
        else:
            _validate_cnn(config.arch, space, out)
        _validate_training(config.training, None, out)
    elif space.family == "mlp_arch":
        if not isinstance(config.arch, MlpArch):
            out.append("config is not an MLP config")
        else:
            _validate_mlp(config.arch, space, out)
        _validate_training(config.training, None, out)
    else:
        _validate_training(config.training, space, out)
    return out


# ---------------------------------------------------------------------------
# Flat encoding

CNN_FIELDS = (
    "kind",
    "channels",
    "downsample_style",
    "bn_fraction",
    "dropout_fraction",
    "input_drop_prob",
    "hidden_drop_prob",
    "shortcut_policy",
    "eta",
    "lambda",
    "batch_size",
)
MLP_FIELDS = ("kind", "hidden_nodes", "drop_prob", "eta", "lambda", "batch_size")


def _fmt_float(x: float) -> str:
    return repr(float(x))


def config_to_pairs(config: Config) -> tuple[tuple[str, str], ...]:
    """Ordered (key, value-string) pairs of the flat encoding."""
    t = config.training
    common = (("eta", _fmt_float(t.eta)), ("lambda", _fmt_float(t.lam)), ("batch_size", str(t.batch_size)))
    if isinstance(config.arch, CnnArch):
        a = config.arch
        return (
            ("kind", "cnn"),
            ("channels", ",".join(str(c) for c in a.channels)),
            ("downsample_style", ",".join(a.downsample_style)),
            ("bn_fraction", str(a.bn_fraction)),
            ("dropout_fraction", str(a.dropout_fraction)),
            ("input_drop_prob", _fmt_float(a.input_drop_prob)),
            ("hidden_drop_prob", _fmt_float(a.hidden_drop_prob)),
            ("shortcut_policy", a.shortcut_policy),
        ) + common
    a = config.arch
    return (
        ("kind", "mlp"),
        ("hidden_nodes", ",".join(str(n) for n in a.hidden_nodes)),
        ("drop_prob", _fmt_float(a.drop_prob)),
    ) + common


def encode_config(config: Config) -> str:
    """Flat UTF-8 text encoding, one ``key = value`` line per field."""
    return "".join(f"{k} = {v}\n" for k, v in config_to_pairs(config))


def _int_list(value: str) -> tuple[int, ...]:
    value = value.strip()
    if not value:
        return ()
    return tuple(int(part) for part in value.split(","))


def _str_list(value: str) -> tuple[str, ...]:
    value = value.strip()
    if not value:
        return ()
    return tuple(part.strip() for part in value.split(","))


def decode_config(source: Union[str, Mapping[str, str]]) -> Config:
    """Inverse of :func:`encode_config`; accepts the text form or a flat mapping."""
    if isinstance(source, str):
        fields: dict[str, str] = {}
        for line in source.splitlines():
            if not line.strip():
                continue
            if " = " not in line:
                raise ConfigError(f"malformed line {line!r}")
            key, value = line.split(" = ", 1)
            fields[key.strip()] = value
    else:
        fields = {str(k): str(v) for k, v in source.items()}

    kind = fields.get("kind")
    if kind == "cnn":
        expected = set(CNN_FIELDS)
    elif kind == "mlp":
        expected = set(MLP_FIELDS)
    else:
        raise ConfigError(f"unknown config kind {kind!r}")
    missing = expected - fields.keys()
    unknown = fields.keys() - expected
    if missing:
        raise ConfigError(f"missing fields: {sorted(missing)}")
    if unknown:
        raise ConfigError(f"unknown fields: {sorted(unknown)}")

    training = TrainingHP(
        eta=float(fields["eta"]), lam=float(fields["lambda"]), batch_size=int(fields["batch_size"])
    )
    if kind == "cnn":
        arch: Arch = CnnArch(
            channels=_int_list(fields["channels"]),
            downsample_style=_str_list(fields["downsample_style"]),
            bn_fraction=Fraction(fields["bn_fraction"]),
            dropout_fraction=Fraction(fields["dropout_fraction"]),
            input_drop_prob=float(fields["input_drop_prob"]),
            hidden_drop_prob=float(fields["hidden_drop_prob"]),
            shortcut_policy=fields["shortcut_policy"],
        )
    else:
        arch = MlpArch(hidden_nodes=_int_list(fields["hidden_nodes"]), drop_prob=float(fields["drop_prob"]))
    return Config(arch=arch, training=training)
