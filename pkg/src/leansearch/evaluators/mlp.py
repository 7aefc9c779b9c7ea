"""Builtin from-scratch MLP trainer (numpy only).

Dense layers + ReLU + softmax cross-entropy, Adam with decoupled weight
decay, inverted dropout on the input and after every hidden activation, He
weight init with 0.1 bias init, learning rate multiplied by 0.2 at the
halfway and three-quarter points of training. Keeps the engine free of
deep-learning framework dependencies while exercising every searched
hyperparameter; CNN training is delegated to an external evaluator process.
"""
from __future__ import annotations

import time

import numpy as np

from ..configs import Config, MlpArch
from ..datasets import InMemoryDataset
from ..objective import EvalResult
from .base import Evaluator, EvaluatorContract
from .params import count_params


def lr_factor(epoch: int, total_epochs: int) -> float:
    """0.2x multiplicative decay applied at the 1/2 and 3/4 epoch points."""
    factor = 1.0
    if epoch >= total_epochs // 2:
        factor *= 0.2
    if epoch >= (3 * total_epochs) // 4:
        factor *= 0.2
    return factor


class _Net:
    def __init__(self, dims: list[int], rng: np.random.Generator):
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            scale = np.sqrt(2.0 / fan_in)  # He init for ReLU stacks
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.full(fan_out, 0.1))

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray, drop_prob: float, rng: np.random.Generator | None):
        """Returns logits plus the per-layer caches needed for backprop.

        ``rng`` enables training mode: inverted dropout on the input and
        after each hidden ReLU.
        """
        caches = []
        a = x
        if rng is not None and drop_prob > 0:
            mask = (rng.random(a.shape) >= drop_prob) / (1.0 - drop_prob)
            a = a * mask
        else:
            mask = None
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = a @ w + b
            last = k == len(self.weights) - 1
            if last:
                caches.append((a, mask, None))
                return z, caches
            h = np.maximum(z, 0.0)
            if rng is not None and drop_prob > 0:
                next_mask = (rng.random(h.shape) >= drop_prob) / (1.0 - drop_prob)
                out = h * next_mask
            else:
                next_mask = None
                out = h
            caches.append((a, mask, z))
            a = out
            mask = next_mask
        raise AssertionError("unreachable: network always has an output layer")


def _softmax_xent(logits: np.ndarray, labels: np.ndarray):
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    n = len(labels)
    loss = -np.log(probs[np.arange(n), labels] + 1e-12).mean()
    grad = probs
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


class BuiltinMlpTrainer(Evaluator):
    """Trains MLP configs on an in-memory dataset, one request at a time."""

    def __init__(self, dataset: InMemoryDataset, epochs: int = 20, timeout_sec: float = 600.0):
        self.data = dataset
        self.contract = EvaluatorContract(
            id=f"builtin_mlp:{dataset.info.name}",
            dataset=dataset.info,
            epochs=epochs,
            supports_cnn=False,
            supports_mlp=True,
            deterministic=False,  # wall-clock t_tr varies run to run
            timeout_sec=timeout_sec,
        )

    def evaluate(self, config: Config, seed: int = 0, epochs: int | None = None,
                 split: str = "search") -> EvalResult:
        self.check_capabilities(config)
        # Overflow on a diverging run is expected; the finite-loss check turns
        # it into a failed result, so suppress the warning spam meanwhile.
        old_err = np.seterr(over="ignore", invalid="ignore")
        try:
            return self._train(config, seed, epochs, split)
        finally:
            np.seterr(**old_err)

    def _train(self, config: Config, seed: int, epochs: int | None, split: str) -> EvalResult:
        arch = config.arch
        assert isinstance(arch, MlpArch)
        hp = config.training
        total_epochs = epochs if epochs is not None else self.contract.epochs

        if split == "final":
            x_train = np.concatenate([self.data.x_train, self.data.x_val])
            y_train = np.concatenate([self.data.y_train, self.data.y_val])
            x_eval, y_eval = self.data.x_test, self.data.y_test
        else:
            x_train, y_train = self.data.x_train, self.data.y_train
            x_eval, y_eval = self.data.x_val, self.data.y_val
        x_train = x_train.reshape(len(x_train), -1)
        x_eval = x_eval.reshape(len(x_eval), -1)

        info = self.data.info
        dims = [x_train.shape[1], *arch.hidden_nodes, info.n_classes]
        rng = np.random.default_rng(seed)
        net = _Net(dims, rng)
        expected = count_params(arch, info.in_shape, info.n_classes)
        assert net.n_params() == expected, "allocated parameters disagree with count_params"

        m_w = [np.zeros_like(w) for w in net.weights]
        v_w = [np.zeros_like(w) for w in net.weights]
        m_b = [np.zeros_like(b) for b in net.biases]
        v_b = [np.zeros_like(b) for b in net.biases]
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        adam_t = 0

        best_acc = 0.0
        epoch_times = []
        started = time.perf_counter()

        for epoch in range(total_epochs):
            lr = hp.eta * lr_factor(epoch, total_epochs)
            order = rng.permutation(len(x_train))
            tic = time.perf_counter()
            diverged = False
            for start in range(0, len(order), hp.batch_size):
                idx = order[start : start + hp.batch_size]
                logits, caches = net.forward(x_train[idx], arch.drop_prob, rng)
                loss, grad = _softmax_xent(logits, y_train[idx])
                if not np.isfinite(loss):
                    diverged = True
                    break
                adam_t += 1
                corr1 = 1.0 - beta1 ** adam_t
                corr2 = 1.0 - beta2 ** adam_t
                delta = grad
                for k in range(len(net.weights) - 1, -1, -1):
                    a_in, mask_in, _ = caches[k]
                    g_w = a_in.T @ delta
                    g_b = delta.sum(axis=0)
                    if k > 0:
                        delta = delta @ net.weights[k].T
                        _, _, z_prev = caches[k - 1]
                        # cache holds the pre-dropout input of layer k; undo both
                        if mask_in is not None:
                            delta = delta * mask_in
                        delta = delta * (z_prev > 0)
                    m_w[k] = beta1 * m_w[k] + (1 - beta1) * g_w
                    v_w[k] = beta2 * v_w[k] + (1 - beta2) * g_w ** 2
                    m_b[k] = beta1 * m_b[k] + (1 - beta1) * g_b
                    v_b[k] = beta2 * v_b[k] + (1 - beta2) * g_b ** 2
                    step_w = (m_w[k] / corr1) / (np.sqrt(v_w[k] / corr2) + eps)
                    step_b = (m_b[k] / corr1) / (np.sqrt(v_b[k] / corr2) + eps)
                    if hp.lam > 0:  # decoupled weight decay, weights only
                        step_w = step_w + hp.lam * net.weights[k]
                    net.weights[k] -= lr * step_w
                    net.biases[k] -= lr * step_b
            epoch_times.append(time.perf_counter() - tic)
            if diverged:
                return EvalResult(best_val_acc=0.0, t_tr_sec=1.0, n_params=expected,
                                  epochs_run=epoch, failed=True, reason="non-finite training loss")
            logits, _ = net.forward(x_eval, arch.drop_prob, None)
            acc = float((logits.argmax(axis=1) == y_eval).mean())
            best_acc = max(best_acc, acc)
            if time.perf_counter() - started > self.contract.timeout_sec:
                return EvalResult(best_val_acc=0.0, t_tr_sec=1.0, n_params=expected,
                                  epochs_run=epoch + 1, failed=True, reason="timeout")

        self._last_weights = (net, dims)  # kept for weight-norm inspection in tests
        return EvalResult(
            best_val_acc=best_acc,
            t_tr_sec=float(np.median(epoch_times)),
            n_params=expected,
            epochs_run=total_epochs,
        )
