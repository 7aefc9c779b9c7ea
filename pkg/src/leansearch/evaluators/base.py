"""Evaluator contract shared by all backends."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..configs import Config
from ..objective import EvalResult


class EvaluatorError(RuntimeError):
    """Unrecoverable evaluator problem (capability mismatch, dead process)."""


@dataclass(frozen=True)
class DatasetInfo:
    """What the evaluator trains on; enough for the engine to count parameters."""

    name: str
    in_shape: tuple[int, ...]  # (features,) for MLP data, (channels, h, w) for images
    n_classes: int
    n_train: int = 0
    n_val: int = 0
    n_test: int = 0


@dataclass(frozen=True)
class EvaluatorContract:
    id: str
    dataset: DatasetInfo
    epochs: int
    supports_cnn: bool = False
    supports_mlp: bool = True
    supports_vote: bool = False
    deterministic: bool = False
    timeout_sec: float = 600.0


class Evaluator:
    """Single-request-at-a-time evaluation backend."""

    contract: EvaluatorContract

    def evaluate(self, config: Config, seed: int = 0, epochs: int | None = None,
                 split: str = "search") -> EvalResult:
        raise NotImplementedError

    def check_capabilities(self, config: Config) -> None:
        if config.kind == "cnn" and not self.contract.supports_cnn:
            raise EvaluatorError(f"evaluator {self.contract.id!r} does not support CNN configs")
        if config.kind == "mlp" and not self.contract.supports_mlp:
            raise EvaluatorError(f"evaluator {self.contract.id!r} does not support MLP configs")

    def close(self) -> None:  # pragma: no cover - most backends hold no resources
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
