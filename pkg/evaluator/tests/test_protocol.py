import json
import subprocess

import pytest

from leansearch.configs import config_to_pairs
from leansearch.evaluators.base import DatasetInfo
from leansearch.evaluators.conformance import run_conformance
from leansearch.evaluators.external import ExternalEvaluator

from conftest import SERVER, mlp_config

DIGITS_INFO = DatasetInfo(name="digits", in_shape=(1, 8, 8), n_classes=10)


class TestWireProtocol:
    def test_handshake_capabilities_include_cnn(self):
        with ExternalEvaluator(SERVER, DIGITS_INFO, epochs=1) as evaluator:
            assert evaluator.contract.supports_cnn
            assert evaluator.contract.supports_mlp
            assert evaluator.contract.supports_vote

    def test_evaluate_round_trip(self):
        with ExternalEvaluator(SERVER, DIGITS_INFO, epochs=2) as evaluator:
            detailed = evaluator.evaluate_detailed(mlp_config(hidden=(30,)), seed=0)
        assert not detailed.result.failed
        assert 0.0 <= detailed.result.best_val_acc <= 1.0
        assert detailed.result.t_tr_sec > 0
        assert detailed.result.epochs_run == 2
        assert detailed.digest is not None

    def test_error_record_keeps_process_alive(self):
        proc = subprocess.Popen(SERVER, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                text=True, bufsize=1)
        try:
            proc.stdin.write(json.dumps({"type": "hello", "version": 1}) + "\n")
            proc.stdin.flush()
            json.loads(proc.stdout.readline())
            good = dict(config_to_pairs(mlp_config(hidden=(20,))))
            bad = dict(good, hidden_nodes="not-a-node-list")
            proc.stdin.write(json.dumps({"type": "evaluate", "id": 1, "config": bad,
                                         "epochs": 1, "seed": 0}) + "\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert reply["type"] == "error" and reply["id"] == 1
            proc.stdin.write(json.dumps({"type": "evaluate", "id": 2, "config": good,
                                         "epochs": 1, "seed": 0}) + "\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert reply["type"] == "result" and reply["id"] == 2
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)

    def test_divergent_training_is_error_record(self):
        # eta within float32 range so the non-finite-loss check fires rather
        # than an optimizer-side overflow error (both end as error records)
        with ExternalEvaluator(SERVER, DIGITS_INFO, epochs=2) as evaluator:
            result = evaluator.evaluate(mlp_config(hidden=(30, 30), eta=1e30), seed=0)
        assert result.failed
        assert "TrainingDiverged" in result.reason


class TestConformanceSuite:
    def test_zero_violations(self):
        violations = run_conformance(SERVER, mlp_config(hidden=(25,)), epochs=1)
        assert violations == []

    def test_raw_session_id_echo(self):
        # belt-and-braces check outside the engine helpers
        proc = subprocess.Popen(SERVER, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                text=True, bufsize=1)
        try:
            proc.stdin.write(json.dumps({"type": "hello", "version": 1}) + "\n")
            proc.stdin.flush()
            hello = json.loads(proc.stdout.readline())
            assert hello["version"] == 1
            request = {"type": "evaluate", "id": 41,
                       "config": dict(config_to_pairs(mlp_config(hidden=()))),
                       "epochs": 1, "seed": 3}
            proc.stdin.write(json.dumps(request) + "\n")
            proc.stdin.flush()
            reply = json.loads(proc.stdout.readline())
            assert reply["id"] == 41
            assert reply["type"] == "result"
            assert reply["n_params"] == 64 * 10 + 10
        finally:
            proc.stdin.close()
            proc.wait(timeout=10)
