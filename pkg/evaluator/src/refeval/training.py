"""Training loop: AdamW, step-decayed learning rate, best-epoch validation.

The learning rate multiplies by 0.2 at the halfway and three-quarter points
of the epoch budget; the config's eta is the initial value. Weight decay is
decoupled (AdamW). Per-epoch training-pass wall time is measured without the
validation pass; the reported time per epoch is the median.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import torch
from torch import nn

from .datasets import Split


class TrainingDiverged(RuntimeError):
    pass


def lr_factor(epoch: int, total_epochs: int) -> float:
    factor = 1.0
    if epoch >= total_epochs // 2:
        factor *= 0.2
    if epoch >= (3 * total_epochs) // 4:
        factor *= 0.2
    return factor


@dataclass
class TrainOutcome:
    best_val_acc: float
    t_tr_sec: float
    epochs_run: int


def _augment_batch(x: torch.Tensor, generator: torch.Generator) -> torch.Tensor:
    """Random 1-pixel crops and horizontal flips (images only)."""
    if x.ndim != 4:
        return x
    n, _, h, w = x.shape
    padded = torch.nn.functional.pad(x, (1, 1, 1, 1))
    dx = torch.randint(0, 3, (n,), generator=generator)
    dy = torch.randint(0, 3, (n,), generator=generator)
    out = torch.stack([padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w] for i in range(n)])
    flip = torch.rand(n, generator=generator) < 0.5
    out[flip] = torch.flip(out[flip], dims=(3,))
    return out


@torch.no_grad()
def _accuracy(model: nn.Module, x: torch.Tensor, y: torch.Tensor, batch: int = 1024) -> float:
    model.eval()
    correct = 0
    for start in range(0, len(x), batch):
        logits = model(x[start:start + batch])
        correct += int((logits.argmax(dim=1) == y[start:start + batch]).sum())
    return correct / len(x)


def train_model(model: nn.Module, data: Split, eta: float, lam: float, batch_size: int,
                epochs: int, seed: int, device: str = "cpu", split: str = "search",
                augment: bool = False) -> TrainOutcome:
    device_t = torch.device(device)
    model = model.to(device_t)
    if split == "final":
        import numpy as np

        x_train = torch.as_tensor(np.concatenate([data.x_train, data.x_val])).to(device_t)
        y_train = torch.as_tensor(np.concatenate([data.y_train, data.y_val])).to(device_t)
        x_eval = torch.as_tensor(data.x_test).to(device_t)
        y_eval = torch.as_tensor(data.y_test).to(device_t)
    else:
        x_train = torch.as_tensor(data.x_train).to(device_t)
        y_train = torch.as_tensor(data.y_train).to(device_t)
        x_eval = torch.as_tensor(data.x_val).to(device_t)
        y_eval = torch.as_tensor(data.y_val).to(device_t)

    generator = torch.Generator().manual_seed(seed)
    optimizer = torch.optim.AdamW(model.parameters(), lr=eta, weight_decay=lam)
    loss_fn = nn.CrossEntropyLoss()

    best_acc = 0.0
    epoch_times = []
    for epoch in range(epochs):
        for group in optimizer.param_groups:
            group["lr"] = eta * lr_factor(epoch, epochs)
        model.train()
        order = torch.randperm(len(x_train), generator=generator)
        tic = time.perf_counter()
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            xb = x_train[idx]
            if augment:
                xb = _augment_batch(xb, generator)
            optimizer.zero_grad()
            loss = loss_fn(model(xb), y_train[idx])
            if not torch.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            loss.backward()
            optimizer.step()
        epoch_times.append(time.perf_counter() - tic)
        best_acc = max(best_acc, _accuracy(model, x_eval, y_eval))

    if not epoch_times:
        raise TrainingDiverged("zero-epoch budget")
    epoch_times.sort()
    mid = len(epoch_times) // 2
    median = epoch_times[mid] if len(epoch_times) % 2 else 0.5 * (
        epoch_times[mid - 1] + epoch_times[mid])
    if not math.isfinite(best_acc):
        raise TrainingDiverged("non-finite validation accuracy")
    return TrainOutcome(best_val_acc=best_acc, t_tr_sec=median, epochs_run=epochs)
