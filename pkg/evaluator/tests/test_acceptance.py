"""Secondary acceptance: protocol conformance against the engine's test
suite, structural fidelity (exact parameter counts and digests), and the
desk-scale CNN search trend through the whole engine pipeline."""
import sys
import time
from contextlib import contextmanager

import numpy as np
import pytest

from leansearch.bayesopt import BOSettings
from leansearch.evaluators.base import DatasetInfo
from leansearch.evaluators.conformance import run_conformance
from leansearch.evaluators.external import ExternalEvaluator
from leansearch.evaluators.params import count_params, structure_digest
from leansearch.pipeline import default_plan, run_full
from leansearch.spaces import cnn_stage1_space

from conftest import SERVER, mlp_config, random_cnn_config

DIGITS_INFO = DatasetInfo(name="digits", in_shape=(1, 8, 8), n_classes=10)


@contextmanager
def criterion(name):
    tic = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name} ({time.perf_counter() - tic:.1f}s)", flush=True)
        raise
    print(f"[PASS] {name} ({time.perf_counter() - tic:.1f}s)", flush=True)


def test_protocol_conformance_zero_violations():
    with criterion("Protocol conformance: handshake, evaluate, error path, id "
                   "ordering, zero violations"):
        violations = run_conformance(SERVER, mlp_config(hidden=(25,)), epochs=1)
        assert violations == []


def test_structural_fidelity_20_random_cnn_configs():
    with criterion("Structural fidelity: 20 random CNN configs, n_params and "
                   "digest match the engine exactly"):
        rng = np.random.default_rng(42)
        with ExternalEvaluator(SERVER, DIGITS_INFO, epochs=1, timeout_sec=300) as evaluator:
            for i in range(20):
                config = random_cnn_config(rng, max_layers=8, first_channels=(16, 48),
                                           cap=256)
                detailed = evaluator.evaluate_detailed(config, seed=i)
                assert not detailed.result.failed, detailed.result.reason
                expected_params = count_params(config.arch, DIGITS_INFO.in_shape,
                                               DIGITS_INFO.n_classes)
                expected_digest = structure_digest(config.arch, DIGITS_INFO.in_shape,
                                                   DIGITS_INFO.n_classes)
                assert detailed.result.n_params == expected_params, config
                assert detailed.digest == expected_digest, config


def test_two_class_toy_set_reaches_90():
    with criterion("2-class 8x8 toy set: best_val_acc >= 0.9 through the wire "
                   "protocol"):
        info = DatasetInfo(name="digits01", in_shape=(1, 8, 8), n_classes=2)
        cmd = SERVER + ["--classes", "0,1"]
        with ExternalEvaluator(cmd, info, epochs=6, timeout_sec=300) as evaluator:
            from leansearch.configs import CnnArch, Config, TrainingHP

            arch = CnnArch((16, 20, 24, 30), (), 1, 1, 0.1, 0.15, "none")
            result = evaluator.evaluate(Config(arch, TrainingHP(1e-3, 0.0, 64)), seed=0)
        assert not result.failed, result.reason
        assert result.best_val_acc >= 0.9


def test_desk_scale_cnn_search_speed_contrast():
    with criterion("Desk-scale CNN search: stages 1-3 over the wire; the w_c=10 "
                   "result trains >= 2x faster per epoch than w_c=0"):
        bo = BOSettings(n1=4, n2=3, n3=60)
        plan = default_plan(
            "cnn",
            stage1_bo=bo,
            stage3_bo=bo,
            search_epochs=3,
            stage1_space=cnn_stage1_space(min_layers=4, max_layers=6,
                                          first_channels=(16, 48)),
        )
        finals = {}
        for wc in (0.0, 10.0):
            with ExternalEvaluator(SERVER, DIGITS_INFO, epochs=3,
                                   timeout_sec=600) as evaluator:
                run = run_full(plan, wc, "t_tr", evaluator, seed=1)
            best = min((e for e in run.events if e["event"] == "eval"
                        and e["stage"] == "stage3" and e["status"] == "ok"),
                       key=lambda e: (e["f"], e["index"]))
            finals[wc] = best
            print(f"    w_c={wc:g}: acc={best['best_val_acc']:.3f} "
                  f"t_tr={best['t_tr_sec']:.4f}s channels={best['config']['channels']}",
                  flush=True)
        assert finals[0.0]["t_tr_sec"] >= 2.0 * finals[10.0]["t_tr_sec"]
