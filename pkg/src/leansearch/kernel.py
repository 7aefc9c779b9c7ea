"""Configuration similarity: ramp distances, squared-exponential kernel, covariance.

Each hyperparameter k contributes a distance

    d(x_ik, x_jk) = omega_k * (|x_ik - x_jk| / (u_k - l_k)) ** r_k

which is 0 at equality and omega_k at maximum separation. Distances become
kernel values sigma = exp(-d^2 / 2) and are convex-combined with weights s_k
into the config similarity. Covariance matrices built from the similarity are
positive semi-definite (a convex combination of squared-exponential kernel
matrices), which is asserted at runtime.

How values are extracted per hyperparameter:

* ``raw``      -- the value itself (batch size, layer counts).
* ``log10``    -- log10 of the value (eta, lambda); zeros substitute the
                  configured floor exponent so distances stay finite.
* ``sum_nodes``-- MLP hidden nodes summed across layers.
* ``per_layer_channels`` -- CNN channels compared layer by layer, each layer
  an equal share of this term's weight; layers present in only one config
  contribute the maximum distance omega.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .configs import CnnArch, Config, MlpArch, SearchSpace
from .spaces import channel_interval

EXTRACTORS = ("raw", "log10", "sum_nodes", "per_layer_channels")
PSD_TOLERANCE = -1e-8


class KernelError(Exception):
    """Internal kernel failure (a PSD violation indicates a kernel bug)."""


@dataclass(frozen=True)
class RampParams:
    """Bounds and shape of one hyperparameter's ramp distance."""

    upper: float
    lower: float
    omega: float = 3.0
    power: float = 1.0

    def __post_init__(self):
        if not self.upper > self.lower:
            raise ValueError(f"upper {self.upper} must exceed lower {self.lower}")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if not 0 < self.power <= 1:
            raise ValueError("power must be in (0, 1]")


@dataclass(frozen=True)
class KernelTerm:
    name: str
    extractor: str
    params: RampParams | tuple[RampParams, ...]
    weight: float
    log_floor: float | None = None  # exponent substituted for zero values

    def __post_init__(self):
        if self.extractor not in EXTRACTORS:
            raise ValueError(f"unknown extractor {self.extractor!r}")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")
        if self.extractor == "per_layer_channels" and not isinstance(self.params, tuple):
            raise ValueError("per-layer extractor needs a tuple of RampParams")

    def layer_params(self, i: int) -> RampParams:
        assert isinstance(self.params, tuple)
        return self.params[min(i, len(self.params) - 1)]


@dataclass(frozen=True)
class KernelSpec:
    stage: str
    family: str
    terms: tuple[KernelTerm, ...]

    def __post_init__(self):
        total = sum(t.weight for t in self.terms)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"term weights must sum to 1, got {total}")


def ramp_distance(a: float, b: float, p: RampParams) -> float:
    """Ramp distance between two values of one hyperparameter.

    Values outside [lower, upper] are clamped with a warning: Stage-2
    mutations can legitimately nudge values onto the bounds.
    """
    lo, hi = p.lower, p.upper
    if not lo <= a <= hi or not lo <= b <= hi:
        warnings.warn(
            f"ramp distance input outside [{lo}, {hi}]: ({a}, {b}); clamping",
            RuntimeWarning,
            stacklevel=2,
        )
        a = min(max(a, lo), hi)
        b = min(max(b, lo), hi)
    return p.omega * (abs(a - b) / (hi - lo)) ** p.power


def kernel_value(d: float) -> float:
    """Squared-exponential kernel exp(-d^2 / 2) of a non-negative distance."""
    if d < 0:
        raise ValueError("distance must be non-negative")
    return math.exp(-0.5 * d * d)


# ---------------------------------------------------------------------------
# Building kernel specs from search spaces


def default_layer_ramps(
    first: tuple[float, float],
    max_layers: int,
    omega: float = 3.0,
    power: float = 1.0,
    cap: int = 512,
) -> tuple[RampParams, ...]:
    """Per-layer channel ramp bounds from the space's own growth rule.

    Layer 1 uses the first-layer bounds; layer i can in principle reach
    [first_lo, min(first_hi * 2^(i-1), cap)], which is what normalizes its
    distance. These are defaults; callers may pass custom per-layer params.
    """
    lo, hi = first
    ramps = []
    for i in range(max_layers):
        upper = min(hi * 2 ** i, cap)
        ramps.append(RampParams(upper=upper, lower=lo, omega=omega, power=power))
    return tuple(ramps)


def kernel_spec_for(
    space: SearchSpace,
    layer_ramps: tuple[RampParams, ...] | None = None,
    lambda_floor_exponent: float = -6.0,
) -> KernelSpec:
    """Derive the similarity spec for a stage space.

    Zero-weight hyperparameters (e.g. CNN depth, which enters through the
    per-layer rule) are omitted from the combination.
    """
    terms: list[KernelTerm] = []
    if space.family == "cnn_arch":
        chan = space.param("channels")
        depth = space.param("depth")
        if layer_ramps is None:
            layer_ramps = default_layer_ramps(
                (chan.lower, chan.upper), int(depth.upper), omega=chan.omega, power=chan.ramp_power
            )
        terms.append(KernelTerm("channels", "per_layer_channels", layer_ramps, chan.weight))
        if depth.weight > 0:
            terms.append(
                KernelTerm("depth", "raw", RampParams(depth.upper, depth.lower, depth.omega, depth.ramp_power), depth.weight)
            )
    elif space.family == "mlp_arch":
        depth = space.param("depth")
        nodes = space.param("hidden_nodes")
        terms.append(
            KernelTerm(
                "depth",
                "raw",
                RampParams(depth.upper, depth.lower, depth.omega, depth.ramp_power),
                depth.weight,
            )
        )
        sum_upper = depth.upper * nodes.upper
        terms.append(
            KernelTerm(
                "hidden_nodes",
                "sum_nodes",
                RampParams(upper=sum_upper, lower=0.0, omega=nodes.omega, power=nodes.ramp_power),
                nodes.weight,
            )
        )
    else:
        eta = space.param("eta")
        lam = space.param("lambda")
        batch = space.param("batch_size")
        terms.append(
            KernelTerm(
                "eta",
                "log10",
                RampParams(math.log10(eta.upper), math.log10(eta.lower), eta.omega, eta.ramp_power),
                eta.weight,
            )
        )
        lam_lower = min(math.log10(lam.lower), lambda_floor_exponent)
        terms.append(
            KernelTerm(
                "lambda",
                "log10",
                RampParams(math.log10(lam.upper), lam_lower, lam.omega, lam.ramp_power),
                lam.weight,
                log_floor=lam_lower,
            )
        )
        terms.append(
            KernelTerm("batch_size", "raw", RampParams(batch.upper, batch.lower, batch.omega, batch.ramp_power), batch.weight)
        )
    active = tuple(t for t in terms if t.weight > 0)
    return KernelSpec(stage=space.stage, family=space.family, terms=active)


# ---------------------------------------------------------------------------
# Similarity


class SimilarityError(ValueError):
    """Config does not belong to the stage the kernel spec was built for."""


def _scalar_value(term: KernelTerm, config: Config) -> float:
    name = term.name
    if name == "eta":
        v = config.training.eta
    elif name == "lambda":
        v = config.training.lam
    elif name == "batch_size":
        v = float(config.training.batch_size)
    elif name == "depth":
        arch = config.arch
        v = float(len(arch.hidden_nodes) if isinstance(arch, MlpArch) else len(arch.channels))
    elif name == "hidden_nodes":
        if not isinstance(config.arch, MlpArch):
            raise SimilarityError("hidden_nodes term requires an MLP config")
        v = float(sum(config.arch.hidden_nodes))
    else:
        raise SimilarityError(f"no extraction rule for term {name!r}")
    if term.extractor == "log10":
        if v <= 0:
            if term.log_floor is None:
                raise SimilarityError(f"log extraction of non-positive {name}={v} without a floor")
            return term.log_floor
        return math.log10(v)
    return v


def _channels(config: Config) -> tuple[int, ...]:
    if not isinstance(config.arch, CnnArch):
        raise SimilarityError("per-layer channels term requires a CNN config")
    return config.arch.channels


def config_similarity(x_i: Config, x_j: Config, spec: KernelSpec) -> float:
    """Similarity in [0, 1]; exactly 1 for identical configs.

    The convex combination is normalized by the accumulated weight so that
    self-similarity is exactly 1 regardless of floating-point weight sums.
    """
    num = 0.0
    den = 0.0
    for term in spec.terms:
        if term.extractor == "per_layer_channels":
            ca, cb = _channels(x_i), _channels(x_j)
            n_layers = max(len(ca), len(cb))
            if n_layers == 0:
                continue
            both = min(len(ca), len(cb))
            share = term.weight / n_layers
            for layer in range(n_layers):
                p = term.layer_params(layer)
                d = ramp_distance(ca[layer], cb[layer], p) if layer < both else p.omega
                num += share * kernel_value(d)
                den += share
        else:
            assert isinstance(term.params, RampParams)
            d = ramp_distance(_scalar_value(term, x_i), _scalar_value(term, x_j), term.params)
            num += term.weight * kernel_value(d)
            den += term.weight
    if den == 0.0:
        raise SimilarityError("kernel spec has no applicable terms")
    return num / den


def cross_similarity(configs_a, configs_b, spec: KernelSpec) -> np.ndarray:
    """Vectorized |A| x |B| similarity matrix (same values as the scalar path).

    Used for scoring large candidate batches against the observed set.
    """
    n, m = len(configs_a), len(configs_b)
    num = np.zeros((n, m))
    den = np.zeros((n, m))
    for term in spec.terms:
        if term.extractor == "per_layer_channels":
            chans_a = [_channels(c) for c in configs_a]
            chans_b = [_channels(c) for c in configs_b]
            len_a = np.array([len(c) for c in chans_a])[:, None]
            len_b = np.array([len(c) for c in chans_b])[None, :]
            max_layers = int(max(len_a.max(initial=0), len_b.max(initial=0)))
            if max_layers == 0:
                continue
            pad_a = np.zeros((n, max_layers))
            pad_b = np.zeros((m, max_layers))
            for r, c in enumerate(chans_a):
                pad_a[r, : len(c)] = c
            for r, c in enumerate(chans_b):
                pad_b[r, : len(c)] = c
            n_layers = np.maximum(len_a, len_b)
            both = np.minimum(len_a, len_b)
            share = term.weight / n_layers
            for layer in range(max_layers):
                p = term.layer_params(layer)
                col_a = np.clip(pad_a[:, layer], p.lower, p.upper)[:, None]
                col_b = np.clip(pad_b[:, layer], p.lower, p.upper)[None, :]
                d = p.omega * (np.abs(col_a - col_b) / (p.upper - p.lower)) ** p.power
                d = np.where(layer < both, d, p.omega)
                active = layer < n_layers
                contribution = share * np.exp(-0.5 * d * d)
                num += np.where(active, contribution, 0.0)
                den += np.where(active, share, 0.0)
        else:
            assert isinstance(term.params, RampParams)
            p = term.params
            va = np.clip([_scalar_value(term, c) for c in configs_a], p.lower, p.upper)
            vb = np.clip([_scalar_value(term, c) for c in configs_b], p.lower, p.upper)
            d = p.omega * (np.abs(va[:, None] - vb[None, :]) / (p.upper - p.lower)) ** p.power
            num += term.weight * np.exp(-0.5 * d * d)
            den += term.weight
    return num / den


def covariance_matrix(configs, spec: KernelSpec, sigma_n2: float = 0.0) -> np.ndarray:
    """Symmetric covariance Sigma_ij = similarity(x_i, x_j) + sigma_n2 on the diagonal.

    Raises :class:`KernelError` if the noise-free matrix has an eigenvalue
    below -1e-8 (the kernel construction guarantees PSD; a violation means a
    bug, not bad data).
    """
    if len(configs) == 0:
        raise ValueError("need at least one config")
    n = len(configs)
    sigma = np.empty((n, n))
    for i in range(n):
        sigma[i, i] = config_similarity(configs[i], configs[i], spec)
        for j in range(i):
            s = config_similarity(configs[i], configs[j], spec)
            sigma[i, j] = s
            sigma[j, i] = s
    min_eig = float(np.linalg.eigvalsh(sigma)[0])
    if min_eig < PSD_TOLERANCE:
        raise KernelError(f"covariance not PSD (min eigenvalue {min_eig:.3e}); kernel bug")
    if sigma_n2:
        if min_eig + sigma_n2 <= 0:
            raise KernelError("noise term does not make the covariance positive definite")
        sigma = sigma + sigma_n2 * np.eye(n)
    return sigma
