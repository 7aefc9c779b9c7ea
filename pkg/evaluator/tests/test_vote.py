import numpy as np
import pytest
import torch

from leansearch.configs import config_to_pairs

from refeval.builder import build_network
from refeval.datasets import load_dataset
from refeval.training import train_model
from refeval.vote import vote_inference

from conftest import mlp_config


@pytest.fixture(scope="module")
def digits():
    return load_dataset("digits", seed=0)


def _train_and_save(config, data, path, seed, epochs=4):
    torch.manual_seed(seed)
    payload = dict(config_to_pairs(config))
    model = build_network(payload, data.in_shape, data.n_classes)
    train_model(model, data, eta=config.training.eta, lam=config.training.lam,
                batch_size=config.training.batch_size, epochs=epochs, seed=seed)
    torch.save({"config": payload, "state": model.state_dict()}, path)
    return model


def _single_accuracy(path, data):
    return vote_inference([str(path)], data.x_test, data.y_test, data.n_classes)


class TestVoteInference:
    def test_single_model_equals_its_own_accuracy(self, digits, tmp_path):
        path = tmp_path / "model_1.pt"
        _train_and_save(mlp_config(hidden=(50,)), digits, path, seed=0)
        solo = _single_accuracy(path, digits)
        ensemble = vote_inference([str(path)], digits.x_test, digits.y_test, digits.n_classes)
        assert ensemble == solo

    def test_identical_models_vote_unanimously(self, digits, tmp_path):
        path = tmp_path / "model_1.pt"
        _train_and_save(mlp_config(hidden=(50,)), digits, path, seed=0)
        solo = _single_accuracy(path, digits)
        ensemble = vote_inference([str(path)] * 3, digits.x_test, digits.y_test,
                                  digits.n_classes)
        assert ensemble == solo

    def test_diverse_ensemble_close_to_best_member(self, digits, tmp_path):
        paths = []
        for i, hidden in enumerate([(40,), (80,), (120,)]):
            path = tmp_path / f"model_{i}.pt"
            _train_and_save(mlp_config(hidden=hidden), digits, path, seed=i, epochs=5)
            paths.append(str(path))
        singles = [_single_accuracy(p, digits) for p in paths]
        ensemble = vote_inference(paths, digits.x_test, digits.y_test, digits.n_classes)
        assert ensemble >= max(singles) - 0.02

    def test_empty_ensemble_rejected(self, digits):
        with pytest.raises(ValueError):
            vote_inference([], digits.x_test, digits.y_test, digits.n_classes)

    def test_missing_weights_error(self, digits, tmp_path):
        with pytest.raises(FileNotFoundError):
            vote_inference([str(tmp_path / "missing.pt")], digits.x_test, digits.y_test,
                           digits.n_classes)
