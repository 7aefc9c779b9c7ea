"""Closed-form stand-ins for network training.

Each family declares an accuracy surface over config features and a cost
model for training time and parameter count, so search behavior can be tested
at desk scale with known landscapes. Results are a pure function of
(config, seed): the noise term is seeded from a digest of the config
encoding, never from global state.

Families
--------
``mlp_capacity`` / ``cnn_capacity``
    Accuracy rises with log parameter count and saturates; the classic
    performance/complexity trade-off surface.
``mlp_peak``
    Accuracy peaks at an interior parameter count; over- and under-sized
    networks both lose.
``bowl``
    Training-space bowl: optimum at eta = 1e-3, batch = 272, lambda = 0.
``interaction``
    Accuracy depends on the eta * batch product, so the combined-space search
    has to get the pair right, not each coordinate separately.
"""
from __future__ import annotations

import hashlib
import math

import numpy as np

from ..configs import CnnArch, Config, encode_config
from ..objective import EvalResult
from .base import DatasetInfo, Evaluator, EvaluatorContract
from .params import conv_work, count_params

FAMILIES = ("mlp_capacity", "cnn_capacity", "mlp_peak", "bowl", "interaction")


def _log_params(config: Config, info: DatasetInfo) -> float:
    return math.log10(count_params(config.arch, info.in_shape, info.n_classes) + 1.0)


def _lambda_exponent(lam: float) -> float:
    return -6.0 if lam <= 0 else math.log10(lam)


def _train_bonus(config: Config) -> float:
    """Mild preference for good training HPs, shared by the arch families."""
    t = config.training
    z_eta = (math.log10(t.eta) + 3.0) / 2.0
    z_batch = (t.batch_size - 272.0) / 480.0
    z_lam = (_lambda_exponent(t.lam) + 6.0) / 3.0
    return 0.08 - (0.10 * z_eta ** 2 + 0.03 * z_batch ** 2 + 0.02 * z_lam ** 2)


def _acc_mlp_capacity(config: Config, info: DatasetInfo) -> float:
    g = _log_params(config, info)
    return 0.55 + 0.35 * (1.0 - math.exp(-max(0.0, g - 2.8) / 0.8)) + _train_bonus(config)


def _acc_cnn_capacity(config: Config, info: DatasetInfo) -> float:
    g = _log_params(config, info)
    return 0.45 + 0.45 * (1.0 - math.exp(-max(0.0, g - 3.0) / 1.0)) + _train_bonus(config)


def _acc_mlp_peak(config: Config, info: DatasetInfo) -> float:
    g = _log_params(config, info)
    return 0.50 + 0.40 * math.exp(-((g - 4.0) ** 2) / (2 * 0.35 ** 2)) + _train_bonus(config)


def _acc_bowl(config: Config, info: DatasetInfo) -> float:
    del info
    t = config.training
    z_eta = math.log10(t.eta) + 3.0
    z_batch = (t.batch_size - 272.0) / 160.0
    z_lam = _lambda_exponent(t.lam) + 6.0
    return 0.92 - 0.15 * z_eta ** 2 - 0.04 * z_batch ** 2 - 0.02 * z_lam ** 2


def _acc_interaction(config: Config, info: DatasetInfo) -> float:
    del info
    t = config.training
    g = math.log10(t.eta * t.batch_size)
    target = math.log10(1e-3 * 272)
    return 0.90 - 0.25 * (g - target) ** 2


_SURFACES = {
    "mlp_capacity": _acc_mlp_capacity,
    "cnn_capacity": _acc_cnn_capacity,
    "mlp_peak": _acc_mlp_peak,
    "bowl": _acc_bowl,
    "interaction": _acc_interaction,
}


class SyntheticEvaluator(Evaluator):
    """Deterministic (at noise 0) closed-form evaluator.

    The declared cost model: per-epoch time grows linearly with network work
    (conv multiply-accumulates for CNNs, parameter count for MLPs) and falls
    mildly with batch size; parameter counts are exact.
    """

    def __init__(
        self,
        family: str = "mlp_capacity",
        noise: float = 0.0,
        epochs: int = 10,
        dataset: DatasetInfo | None = None,
        t_base: float = 10.0,
        fail_when=None,
    ):
        if family not in _SURFACES:
            raise ValueError(f"unknown synthetic family {family!r}; choose from {FAMILIES}")
        if dataset is None:
            if family.startswith("cnn"):
                dataset = DatasetInfo(name="synthetic-images", in_shape=(3, 16, 16), n_classes=10)
            else:
                dataset = DatasetInfo(name="synthetic-flat", in_shape=(64,), n_classes=10)
        self.family = family
        self.noise = float(noise)
        self.t_base = float(t_base)
        self.fail_when = fail_when
        self.contract = EvaluatorContract(
            id=f"synthetic:{family}",
            dataset=dataset,
            epochs=epochs,
            supports_cnn=True,
            supports_mlp=True,
            deterministic=noise == 0.0,
        )

    def _rng(self, config: Config, seed: int) -> np.random.Generator:
        digest = hashlib.sha256(encode_config(config).encode("utf-8")).digest()
        entropy = int.from_bytes(digest[:8], "little")
        return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, entropy]))

    def declared_t_tr(self, config: Config) -> float:
        info = self.contract.dataset
        if isinstance(config.arch, CnnArch):
            work = conv_work(config.arch, info.in_shape)
            work_ref = 2.0e7
        else:
            work = float(count_params(config.arch, info.in_shape, info.n_classes))
            work_ref = 2.0e5
        batch_factor = (256.0 / config.training.batch_size) ** 0.25
        return self.t_base * (0.05 + work / work_ref) * batch_factor

    def evaluate(self, config: Config, seed: int = 0, epochs: int | None = None,
                 split: str = "search") -> EvalResult:
        del split  # synthetic surfaces have no holdout distinction
        if self.fail_when is not None and self.fail_when(config):
            return EvalResult(best_val_acc=0.0, t_tr_sec=1.0, n_params=0, epochs_run=0,
                              failed=True, reason="synthetic failure predicate")
        info = self.contract.dataset
        acc = _SURFACES[self.family](config, info)
        if self.noise:
            acc += self.noise * float(self._rng(config, seed).normal())
        acc = min(max(acc, 0.0), 1.0)
        return EvalResult(
            best_val_acc=acc,
            t_tr_sec=self.declared_t_tr(config),
            n_params=count_params(config.arch, info.in_shape, info.n_classes),
            epochs_run=epochs if epochs is not None else self.contract.epochs,
        )


def bundled_suite(noise: float = 0.01) -> list[tuple[str, SyntheticEvaluator]]:
    """The synthetic benchmark suite used by the trend harnesses."""
    return [(family, SyntheticEvaluator(family, noise=noise)) for family in FAMILIES]
