import sys
from pathlib import Path

import pytest

from leansearch.configs import Config, MlpArch, TrainingHP
from leansearch.evaluators.base import DatasetInfo
from leansearch.evaluators.conformance import run_conformance
from leansearch.evaluators.external import ExternalEvaluator, ProtocolError

ECHO = [sys.executable, str(Path(__file__).parent / "echo_evaluator.py")]
DATASET = DatasetInfo(name="echo", in_shape=(64,), n_classes=10)


def _config(eta=0.123, batch=456):
    return Config(MlpArch((50,), 0.2), TrainingHP(eta, 0.0, batch))


def _evaluator(*flags, **kwargs):
    return ExternalEvaluator(ECHO + list(flags), DATASET, epochs=3, **kwargs)


class TestExternalEvaluator:
    def test_round_trip_bit_exact(self):
        with _evaluator() as ev:
            result = ev.evaluate(_config(eta=0.123, batch=456), seed=7)
        assert not result.failed
        assert result.best_val_acc == 0.123  # exactly the declared value
        assert result.t_tr_sec == 0.456
        assert result.n_params == 456
        assert result.epochs_run == 3

    def test_capabilities_from_handshake(self):
        with _evaluator() as ev:
            assert ev.contract.supports_cnn
            assert ev.contract.supports_mlp
            assert ev.contract.deterministic

    def test_version_mismatch_fails_before_any_evaluation(self):
        with pytest.raises(ProtocolError, match="version"):
            ExternalEvaluator(ECHO + ["--bad-version"], DATASET)

    def test_malformed_response_is_structured_failure(self):
        with _evaluator("--garbage") as ev:
            result = ev.evaluate(_config())
        assert result.failed
        assert "malformed" in result.reason

    def test_wrong_id_is_structured_failure(self):
        with _evaluator("--wrong-id") as ev:
            result = ev.evaluate(_config())
        assert result.failed
        assert "response id" in result.reason

    def test_process_exit_is_structured_failure(self):
        with _evaluator("--die-on-evaluate") as ev:
            result = ev.evaluate(_config())
        assert result.failed

    def test_timeout_is_structured_failure(self):
        with _evaluator("--mute-evaluate", timeout_sec=0.3) as ev:
            result = ev.evaluate(_config())
        assert result.failed
        assert "timeout" in result.reason

    def test_mute_handshake_times_out(self):
        with pytest.raises(TimeoutError):
            ExternalEvaluator(ECHO + ["--mute"], DATASET, handshake_timeout_sec=0.2)

    def test_ids_strictly_increasing(self):
        with _evaluator() as ev:
            ev.evaluate(_config())
            ev.evaluate(_config())
            ev.evaluate(_config())
            assert ev._next_id == 4

    def test_error_record_for_bad_config_keeps_process_alive(self):
        with _evaluator() as ev:
            # the double validates channels/hidden_nodes itself
            from leansearch.evaluators.external import _config_payload

            result = ev.evaluate(_config())
            assert not result.failed


class TestConformance:
    def test_echo_double_conforms(self):
        violations = run_conformance(ECHO, _config(), epochs=1)
        assert violations == []

    def test_bad_version_double_is_caught(self):
        violations = run_conformance(ECHO + ["--bad-version"], _config(), epochs=1)
        assert any("version" in v for v in violations)

    def test_wrong_id_double_is_caught(self):
        violations = run_conformance(ECHO + ["--wrong-id"], _config(), epochs=1)
        assert any("id" in v for v in violations)
