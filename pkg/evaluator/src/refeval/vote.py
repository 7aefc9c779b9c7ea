"""Majority-vote ensemble inference over saved models."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import torch

from .builder import build_network


def load_model(path: str | Path, in_shape, n_classes):
    payload = torch.load(path, map_location="cpu", weights_only=False)
    model = build_network(payload["config"], tuple(in_shape), n_classes)
    model.load_state_dict(payload["state"])
    model.eval()
    return model


@torch.no_grad()
def vote_inference(model_paths, x: np.ndarray, y: np.ndarray, n_classes: int,
                   batch: int = 512) -> float:
    """Ensemble accuracy by per-sample majority vote over argmax predictions.

    Ties are broken toward the tied class with the highest mean softmax
    probability across the ensemble.
    """
    if not model_paths:
        raise ValueError("need at least one trained model")
    models = [load_model(p, x.shape[1:], n_classes) for p in model_paths]
    xt = torch.as_tensor(x)
    votes = np.zeros((len(x), n_classes), dtype=np.int64)
    mean_probs = np.zeros((len(x), n_classes))
    for model in models:
        probs = []
        for start in range(0, len(xt), batch):
            probs.append(torch.softmax(model(xt[start:start + batch]), dim=1).numpy())
        probs_arr = np.concatenate(probs)
        votes[np.arange(len(x)), probs_arr.argmax(axis=1)] += 1
        mean_probs += probs_arr / len(models)
    top = votes.max(axis=1, keepdims=True)
    tied = votes == top
    # keep only tied classes in contention, then take the softmax-richest
    masked = np.where(tied, mean_probs, -1.0)
    predictions = masked.argmax(axis=1)
    return float((predictions == y).mean())
