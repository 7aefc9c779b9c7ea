import itertools
import math

import numpy as np
import pytest

from leansearch.bayesopt import BOSettings
from leansearch.configs import (
    CnnArch,
    Config,
    MlpArch,
    TrainingHP,
    decode_config,
    encode_config,
    expand_downsampling,
)
from leansearch.evaluators.base import EvaluatorError
from leansearch.evaluators.synthetic import SyntheticEvaluator
from leansearch.kernel import kernel_spec_for
from leansearch.objective import ObjectiveSpec
from leansearch.pipeline import (
    CNN_SUBSTAGES,
    PresetPolicy,
    compare_modes,
    default_plan,
    ensemble_select,
    run_full,
    run_stage1,
    run_stage2,
    run_stage3,
    search_transfer,
    stage2_grid,
)
from leansearch.spaces import map_unit_sample, mlp_stage1_space, unit_dim


def small_bo(n1=4, n2=4, n3=60):
    return BOSettings(n1=n1, n2=n2, n3=n3)


def mlp_plan(**kwargs):
    defaults = dict(stage1_bo=small_bo(), stage3_bo=small_bo(), search_epochs=5)
    defaults.update(kwargs)
    return default_plan("mlp", **defaults)


def cnn_plan(**kwargs):
    defaults = dict(stage1_bo=small_bo(), stage3_bo=small_bo(), search_epochs=5)
    defaults.update(kwargs)
    return default_plan("cnn", **defaults)


def eval_events(run, stage=None):
    events = [e for e in run.events if e["event"] == "eval"]
    if stage is not None:
        events = [e for e in events if e["stage"] == stage]
    return events


class TestPresets:
    def test_cnn_presets_applied(self):
        presets = PresetPolicy(lambda_profile="cnn")
        deep = CnnArch((30,) * 10, (), 0, 0, 0.0, 0.0, "none")
        applied = presets.apply_arch_presets(deep)
        assert applied.bn_fraction == 1
        assert applied.dropout_fraction == 1
        assert applied.hidden_drop_prob == 0.3
        assert applied.shortcut_policy == "every_other"  # 10 > 8 conv layers
        shallow = presets.apply_arch_presets(CnnArch((30,) * 8, (), 0, 0, 0.0, 0.0, "none"))
        assert shallow.shortcut_policy == "none"

    def test_preset_lambda_wired_through(self):
        presets = PresetPolicy(lambda_profile="mlp_small")
        evaluator = SyntheticEvaluator("mlp_capacity")
        big = MlpArch((400, 400), 0.2)
        config = presets.complete_arch(big, evaluator.contract.dataset)
        assert config.training.eta == 1e-3
        assert config.training.batch_size == 256
        assert config.training.lam > 0  # 190k params is over the 1e4 threshold
        tiny = MlpArch((), 0.2)
        config = presets.complete_arch(tiny, evaluator.contract.dataset)
        assert config.training.lam == 0.0  # 650 params is under it


class TestStage2Grids:
    def test_mlp_grid_is_exactly_five(self):
        grid = stage2_grid("drop_prob", MlpArch((100,), 0.2))
        assert [a.drop_prob for a in grid] == [0.0, 0.1, 0.3, 0.4, 0.5]

    def test_downsampling_grid_is_two_to_the_points(self):
        channels = (50, 70, 140, 280)
        arch = CnnArch(channels, ("maxpool",) * 3, 1, 1, 0.3, 0.3, "none")
        assert len(expand_downsampling(channels)) == 3
        grid = stage2_grid("downsampling", arch)
        assert len(grid) == 8
        assert len({a.downsample_style for a in grid}) == 8

    def test_bn_grid(self):
        arch = CnnArch((20, 30), (), 1, 1, 0.3, 0.3, "none")
        grid = stage2_grid("bn", arch)
        assert [str(a.bn_fraction) for a in grid] == ["0", "1/4", "1/2", "3/4"]

    def test_dropout_grid_is_24(self):
        arch = CnnArch((20, 30), (), 1, 1, 0.3, 0.3, "none")
        grid = stage2_grid("dropout", arch)
        assert len(grid) == 24  # 4 fractions x 2 input probs x 3 hidden probs

    def test_shortcut_grid(self):
        arch = CnnArch((20, 30), (), 1, 1, 0.3, 0.3, "none")
        assert [a.shortcut_policy for a in stage2_grid("shortcuts", arch)] == [
            "none", "every_4th", "every_other"]


class TestStages:
    def test_stage1_budget_and_preset_hps_in_trace(self):
        plan = mlp_plan()
        evaluator = SyntheticEvaluator("mlp_capacity")
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)
        events = []
        incumbent, result = run_stage1(plan, spec, evaluator, seed=0, sink=events.append)
        evals = [e for e in events if e["event"] == "eval"]
        assert len(evals) == plan.stage1_bo.budget == 8
        for e in evals:
            assert e["config"]["eta"] == repr(1e-3)
            assert e["config"]["batch_size"] == "256"

    def test_stage1_finds_top_5pct_of_enumerable_space(self):
        # Exhaustive oracle over a deliberately small space.
        space = mlp_stage1_space(max_hidden_layers=1, nodes=(20, 120))
        plan = mlp_plan(stage1_space=space,
                        stage1_bo=BOSettings(n1=8, n2=7, n3=300))
        evaluator = SyntheticEvaluator("mlp_peak")
        dataset = evaluator.contract.dataset
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)

        def f_of(arch):
            config = plan.presets.complete_arch(arch, dataset)
            return 1.0 - evaluator.evaluate(config, seed=0).best_val_acc

        enumerated = [MlpArch((), 0.2)] + [MlpArch((n,), 0.2) for n in range(20, 121)]
        oracle = sorted(f_of(a) for a in enumerated)
        cutoff = oracle[max(0, int(math.ceil(0.05 * len(oracle))) - 1)]

        incumbent, result = run_stage1(plan, spec, evaluator, seed=3)
        assert result.best_f <= cutoff + 1e-12

    def test_stage2_freezing_and_order(self):
        plan = cnn_plan()
        evaluator = SyntheticEvaluator("cnn_capacity")
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)
        start = CnnArch((50, 70, 140, 280), ("maxpool",) * 3, 1, 1, 0.3, 0.3, "none")
        incumbent = plan.presets.complete_arch_exact(start, evaluator.contract.dataset)
        events = []
        final, stage2_events = run_stage2(incumbent, plan, spec, evaluator, seed=0,
                                          sink=events.append)
        counts = {}
        for e in stage2_events:
            counts[e["substage"]] = counts.get(e["substage"], 0) + 1
        assert counts == {"downsampling": 8, "bn": 4, "dropout": 24, "shortcuts": 3}
        # sub-stage order follows the plan
        order = list(dict.fromkeys(e["substage"] for e in stage2_events))
        assert order == list(CNN_SUBSTAGES)
        # freezing: within a later sub-stage, earlier axes match the winner so far
        by_sub = {s: [e for e in stage2_events if e["substage"] == s] for s in counts}
        bn_winner = min(by_sub["bn"], key=lambda e: (e["f"], e["index"]))
        for e in by_sub["dropout"]:
            assert e["config"]["bn_fraction"] == bn_winner["config"]["bn_fraction"]
            assert e["config"]["downsample_style"] == bn_winner["config"]["downsample_style"]
        dropout_winner = min(by_sub["dropout"], key=lambda e: (e["f"], e["index"]))
        for e in by_sub["shortcuts"]:
            assert e["config"]["bn_fraction"] == dropout_winner["config"]["bn_fraction"]
            assert e["config"]["dropout_fraction"] == dropout_winner["config"]["dropout_fraction"]
            assert e["config"]["input_drop_prob"] == dropout_winner["config"]["input_drop_prob"]
            assert e["config"]["hidden_drop_prob"] == dropout_winner["config"]["hidden_drop_prob"]

    def test_stage2_mlp_is_five_evaluations(self):
        plan = mlp_plan()
        evaluator = SyntheticEvaluator("mlp_capacity")
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)
        incumbent = plan.presets.complete_arch(MlpArch((100,), 0.2), evaluator.contract.dataset)
        final, events = run_stage2(incumbent, plan, spec, evaluator, seed=0)
        assert len(events) == 5

    def test_stage3_budget_and_lambda_snap(self):
        plan = mlp_plan()
        evaluator = SyntheticEvaluator("bowl")
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)
        incumbent = Config(MlpArch((100,), 0.2), TrainingHP(1e-3, 0.0, 256))
        events = []
        final, result = run_stage3(incumbent, plan, spec, evaluator, seed=0, sink=events.append)
        evals = [e for e in events if e["event"] == "eval"]
        assert len(evals) == plan.stage3_bo.budget
        assert final.arch == incumbent.arch  # architecture frozen
        # the lambda snap rule: exponents below -5 encode exactly 0
        lams = [float(e["config"]["lambda"]) for e in evals]
        assert all(lam == 0.0 or lam >= 10 ** -5 for lam in lams)
        assert any(lam == 0.0 for lam in lams)

    def test_stage3_bowl_close_to_dense_grid_oracle(self):
        plan = mlp_plan(stage3_bo=BOSettings(n1=15, n2=15, n3=800))
        evaluator = SyntheticEvaluator("bowl")
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)
        incumbent = Config(MlpArch((100,), 0.2), TrainingHP(1e-3, 0.0, 256))
        _, result = run_stage3(incumbent, plan, spec, evaluator, seed=1)
        # dense-grid oracle over the 3-D space
        space = plan.stage3_space
        best = math.inf
        for ue in np.linspace(0, 1, 41):
            for ul in np.linspace(0, 1, 7):
                for ub in np.linspace(0, 1, 31):
                    hp = map_unit_sample(space, np.array([ue, ul, ub]))
                    config = Config(incumbent.arch, hp)
                    f = 1.0 - evaluator.evaluate(config, seed=0).best_val_acc
                    best = min(best, f)
        assert result.best_f <= 1.05 * best


class TestRunFull:
    def test_width_one_single_final(self):
        plan = mlp_plan()
        run = run_full(plan, w_c=0.0, metric="t_tr",
                       evaluator=SyntheticEvaluator("mlp_capacity"), seed=0)
        assert len(run.finals) == 1
        assert len(run.branches) == 1

    def test_width_three_nine_finals(self):
        plan = mlp_plan()
        run = run_full(plan, w_c=0.0, metric="t_tr",
                       evaluator=SyntheticEvaluator("mlp_peak", noise=0.02), seed=1,
                       greedy_width=3)
        assert len(run.branches) == 3
        assert len(run.finals) == 9
        fs = [f for _, f in run.finals]
        assert fs == sorted(fs)

    def test_greedy_chain_integrity(self):
        plan = mlp_plan()
        evaluator = SyntheticEvaluator("mlp_capacity")
        run = run_full(plan, w_c=0.0, metric="t_tr", evaluator=evaluator, seed=0)
        stage1 = eval_events(run, "stage1")
        stage2 = eval_events(run, "stage2")
        winner1 = min(stage1, key=lambda e: (e["f"], e["index"]))
        # stage 2 varies only drop_prob relative to the stage-1 winner
        for e in stage2:
            assert e["config"]["hidden_nodes"] == winner1["config"]["hidden_nodes"]
        winner2 = min(stage2, key=lambda e: (e["f"], e["index"]))
        for e in eval_events(run, "stage3"):
            assert e["config"]["hidden_nodes"] == winner2["config"]["hidden_nodes"]
            assert e["config"]["drop_prob"] == winner2["config"]["drop_prob"]

    def test_total_budget_computable_a_priori(self):
        plan = mlp_plan()
        run = run_full(plan, w_c=0.0, metric="t_tr",
                       evaluator=SyntheticEvaluator("mlp_capacity"), seed=0)
        expected = plan.stage1_bo.budget + 5 + plan.stage3_bo.budget
        assert len(eval_events(run)) == expected

    def test_calibration_recorded_when_penalty_active(self):
        plan = mlp_plan()
        run = run_full(plan, w_c=0.5, metric="t_tr",
                       evaluator=SyntheticEvaluator("mlp_capacity"), seed=0)
        assert len(eval_events(run, "calibration")) == 1
        assert run.objective_spec.c0 > 0
        run0 = run_full(plan, w_c=0.0, metric="t_tr",
                        evaluator=SyntheticEvaluator("mlp_capacity"), seed=0)
        assert eval_events(run0, "calibration") == []

    def test_reproducibility(self):
        plan = mlp_plan()
        a = run_full(plan, w_c=0.1, metric="t_tr",
                     evaluator=SyntheticEvaluator("mlp_capacity", noise=0.01), seed=5)
        b = run_full(plan, w_c=0.1, metric="t_tr",
                     evaluator=SyntheticEvaluator("mlp_capacity", noise=0.01), seed=5)
        assert a.best == b.best
        assert eval_events(a) == eval_events(b)


class TestTransfer:
    def test_architecture_bit_identical_and_budget(self):
        plan = mlp_plan()
        source = SyntheticEvaluator("mlp_capacity")
        run = run_full(plan, w_c=0.0, metric="t_tr", evaluator=source, seed=0)
        stage2_events = eval_events(run, "stage2")
        source_incumbent = decode_config(
            min(stage2_events, key=lambda e: (e["f"], e["index"]))["config"])

        target = SyntheticEvaluator("mlp_capacity", noise=0.05)
        events = []
        final, result, _ = search_transfer(source_incumbent, plan, 0.0, "t_tr",
                                           target, seed=9, sink=events.append)
        assert final.arch == source_incumbent.arch
        assert encode_config(final).splitlines()[:2] == encode_config(source_incumbent).splitlines()[:2]
        evals = [e for e in events if e["event"] == "eval"]
        assert len(evals) == plan.stage3_bo.budget

    def test_incompatible_target_fails_before_training(self):
        plan = cnn_plan()
        cnn_config = Config(CnnArch((20, 30), (), 1, 1, 0.3, 0.3, "none"),
                            TrainingHP(1e-3, 0.0, 256))
        from leansearch.datasets import make_blobs_dataset
        from leansearch.evaluators.mlp import BuiltinMlpTrainer

        mlp_only = BuiltinMlpTrainer(make_blobs_dataset(seed=0), epochs=1)
        events = []
        with pytest.raises(EvaluatorError):
            search_transfer(cnn_config, plan, 0.0, "t_tr", mlp_only, seed=0,
                            sink=events.append)
        assert events == []  # no evaluations consumed


class TestEnsemble:
    def _stage3(self):
        plan = mlp_plan()
        evaluator = SyntheticEvaluator("bowl")
        spec = ObjectiveSpec(w_c=0.0, metric="t_tr", c0=1.0)
        incumbent = Config(MlpArch((100,), 0.2), TrainingHP(1e-3, 0.0, 256))
        _, result = run_stage3(incumbent, plan, spec, evaluator, seed=0)
        return result, plan.stage3_bo

    def test_n_one_is_the_incumbent(self):
        result, settings = self._stage3()
        members, descriptor = ensemble_select(result, 1, settings)
        assert members[0][0] == result.best_config
        assert descriptor["method"] == "majority_vote"

    def test_members_share_architecture(self):
        result, settings = self._stage3()
        members, _ = ensemble_select(result, 5, settings)
        archs = {m.arch for m, _ in members}
        assert len(archs) == 1

    def test_budget_boundary(self):
        result, settings = self._stage3()
        ensemble_select(result, settings.budget, settings)  # allowed
        with pytest.raises(ValueError):
            ensemble_select(result, settings.budget + 1, settings)


class TestCompareModes:
    def test_rows_and_budgets(self):
        space = mlp_stage1_space()
        spec = kernel_spec_for(space)
        evaluator = SyntheticEvaluator("mlp_capacity")
        presets = PresetPolicy()
        complete = lambda s: presets.complete_arch(s, evaluator.contract.dataset)  # noqa: E731
        rows = compare_modes(space, spec, complete, evaluator, 0.0, "t_tr",
                             modes=("random", "grid", "balanced", "extreme"),
                             seeds=(0, 1), n3=50)
        assert len(rows) == 8
        assert all(r["evaluations"] == 30 for r in rows)
