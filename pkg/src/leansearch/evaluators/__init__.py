"""Config evaluation backends: synthetic surfaces, a builtin MLP trainer, and
an external-process client speaking the line-delimited wire protocol."""
from .base import DatasetInfo, Evaluator, EvaluatorContract, EvaluatorError
from .params import count_params, structure_digest, structure_lines

__all__ = [
    "DatasetInfo",
    "Evaluator",
    "EvaluatorContract",
    "EvaluatorError",
    "count_params",
    "structure_digest",
    "structure_lines",
]
