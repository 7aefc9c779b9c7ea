"""The scalar search objective: performance term plus weighted complexity penalty.

    f(config) = (1 - best validation accuracy) + w_c * (c / c0)

where ``c`` is the chosen complexity metric of a config (training seconds per
epoch, or trainable-parameter count) and ``c0`` a reference value measured on
a high-complexity config of the same space. ``w_c = 0`` searches purely for
accuracy; larger values trade accuracy away for cheaper-to-train models.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

METRICS = ("t_tr", "n_params")

# profile -> (parameter-count threshold, divisor) for the weight-decay preset
LAMBDA_PROFILES = {
    "cnn": (1e6, 1e11),
    "mlp_small": (1e4, 1e9),
    "mlp_large": (1e5, 1e10),
}


@dataclass(frozen=True)
class EvalResult:
    """Outcome of training (or simulating) one config."""

    best_val_acc: float
    t_tr_sec: float
    n_params: int
    epochs_run: int
    failed: bool = False
    reason: str = ""

    def __post_init__(self):
        if not self.failed:
            if not 0.0 <= self.best_val_acc <= 1.0:
                raise ValueError(f"best_val_acc {self.best_val_acc} outside [0, 1]")
            if not self.t_tr_sec > 0:
                raise ValueError("t_tr_sec must be positive")
            if self.n_params < 0:
                raise ValueError("n_params must be non-negative")


@dataclass(frozen=True)
class ObjectiveSpec:
    w_c: float
    metric: str = "t_tr"
    c0: float = 1.0

    def __post_init__(self):
        if self.w_c < 0:
            raise ValueError("w_c must be non-negative")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}")
        if not self.c0 > 0:
            raise ValueError("c0 must be positive")


@dataclass(frozen=True)
class ObjectiveOutcome:
    """Score decomposition recorded in traces."""

    f: float
    f_p: float
    f_c: float
    metric_value: float
    result: EvalResult

    @property
    def failed(self) -> bool:
        return self.result.failed


def metric_value(result: EvalResult, spec: ObjectiveSpec) -> float:
    return result.t_tr_sec if spec.metric == "t_tr" else float(result.n_params)


def score(result: EvalResult, spec: ObjectiveSpec) -> float:
    """f = f_p + w_c * f_c; failed evaluations score +inf."""
    if result.failed:
        return math.inf
    return (1.0 - result.best_val_acc) + spec.w_c * (metric_value(result, spec) / spec.c0)


def decompose(result: EvalResult, spec: ObjectiveSpec) -> ObjectiveOutcome:
    if result.failed:
        return ObjectiveOutcome(f=math.inf, f_p=math.inf, f_c=math.inf, metric_value=math.inf, result=result)
    c = metric_value(result, spec)
    f_p = 1.0 - result.best_val_acc
    f_c = c / spec.c0
    return ObjectiveOutcome(f=f_p + spec.w_c * f_c, f_p=f_p, f_c=f_c, metric_value=c, result=result)


def preset_lambda(n_params: int, profile: str) -> float:
    """Weight-decay preset: 0 below the profile threshold, N_p/divisor at or above."""
    if n_params < 0:
        raise ValueError("n_params must be non-negative")
    try:
        threshold, divisor = LAMBDA_PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown lambda profile {profile!r}; choose from {sorted(LAMBDA_PROFILES)}")
    return n_params / divisor if n_params >= threshold else 0.0


class CalibrationError(RuntimeError):
    """c0 could not be measured; a run cannot proceed without it."""


def calibrate_c0(space, evaluator, metric: str, complete, epochs: int = 4):
    """Measure the reference complexity c0 on the space's maximal config.

    The maximal config (max depth, max per-layer widths, preset training
    hyperparameters) is built via ``complete``; for ``n_params`` the count is
    exact and free, for ``t_tr`` the evaluator trains briefly and the median
    per-epoch time is used. Returns ``(c0, config, result_or_none)``.
    """
    from .spaces import maximal_sample

    config = complete(maximal_sample(space))
    if metric == "n_params":
        from .evaluators.params import count_params

        dataset = evaluator.contract.dataset
        return float(count_params(config.arch, dataset.in_shape, dataset.n_classes)), config, None
    try:
        result = evaluator.evaluate(config, seed=0, epochs=epochs)
    except Exception as exc:  # noqa: BLE001 - calibration failure is terminal
        raise CalibrationError(f"calibration evaluation raised: {exc}") from exc
    if result.failed:
        raise CalibrationError(f"calibration evaluation failed: {result.reason}")
    return float(result.t_tr_sec), config, result
