import json
import math

import pytest

from leansearch.configs import Config, MlpArch, TrainingHP
from leansearch.manifest import ManifestError, build_evaluator, build_plan, canonicalize, dump_manifest
from leansearch.objective import EvalResult, ObjectiveSpec, decompose
from leansearch.persistence import (
    TRADEOFF_COLUMNS,
    TraceWriter,
    candidate_record,
    eval_record,
    read_trace,
    summarize,
    write_csv,
)


def _outcome(acc=0.8, t_tr=2.0, n_params=100, failed=False):
    spec = ObjectiveSpec(w_c=0.1, metric="t_tr", c0=10.0)
    result = EvalResult(0.0 if failed else acc, 1.0 if failed else t_tr,
                        0 if failed else n_params, 0 if failed else 3, failed=failed,
                        reason="boom" if failed else "")
    return decompose(result, spec)


def _config(nodes=(50,)):
    return Config(MlpArch(nodes, 0.2), TrainingHP(1e-3, 0.0, 256))


class TestTrace:
    def test_every_eval_appears_once_with_monotone_timestamps(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path) as trace:
            for i in range(20):
                trace(eval_record("stage1", i, _config((20 + i,)), _outcome(), seed=i,
                                  phase="bo"))
                trace(candidate_record("stage1", 0, i, _config((20 + i,)), 0.1, 0.2, 0.3))
        records = read_trace(path)
        evals = [r for r in records if r["event"] == "eval"]
        assert len(evals) == 20
        assert len({(r["stage"], r["index"]) for r in evals}) == 20
        stamps = [r["ts"] for r in records]
        assert all(a < b for a, b in zip(stamps, stamps[1:]))

    def test_failed_eval_serializes_infinity(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path) as trace:
            trace(eval_record("stage1", 0, _config(), _outcome(failed=True), seed=0))
        record = read_trace(path)[0]
        assert record["f"] == "inf"
        assert record["status"] == "failed"

    def test_appends_are_crash_safe(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        trace = TraceWriter(path)
        trace(eval_record("stage1", 0, _config(), _outcome(), seed=0))
        # no close(): the line must already be on disk
        assert len(read_trace(path)) == 1
        trace.close()


class TestSummarize:
    def _records(self):
        records = []
        for i, acc in enumerate([0.7, 0.9, 0.8]):
            records.append(eval_record("stage1", i, _config((20 + i,)), _outcome(acc), seed=i))
        records.append(eval_record("stage2", 3, _config((21,)), _outcome(0.85), seed=3))
        for i, acc in enumerate([0.88, 0.92]):
            records.append(eval_record("stage3", 4 + i, _config((21,)), _outcome(acc), seed=4 + i))
        return records

    def test_counts_and_final(self):
        summary = summarize(self._records())
        assert summary["evaluations"] == {"stage1": 3, "stage2": 1, "stage3": 2, "total": 6}
        assert summary["final"]["best_val_acc"] == 0.92
        assert summary["stage_incumbents"]["stage1"]["config"]["hidden_nodes"] == "21"

    def test_cost_is_time_times_epochs(self):
        summary = summarize(self._records())
        assert summary["search_cost_sec"] == pytest.approx(6 * 2.0 * 3)

    def test_recomputable_from_trace_file(self, tmp_path):
        path = tmp_path / "trace.jsonl"
        with TraceWriter(path) as trace:
            for record in self._records():
                trace(record)
        from_file = summarize(read_trace(path))
        in_memory = summarize(self._records())
        assert from_file == in_memory


class TestManifest:
    MINIMAL = {
        "problem": "mlp",
        "objective": {"wc": 0.0, "metric": "t_tr"},
        "evaluator": {"id": "synthetic", "family": "mlp_capacity"},
    }

    def test_round_trip_is_fixed_point(self):
        canon = canonicalize(self.MINIMAL)
        text = dump_manifest(canon)
        again = canonicalize(json.loads(text))
        assert dump_manifest(again) == text

    def test_unknown_top_level_key_rejected(self):
        bad = dict(self.MINIMAL, bogus=1)
        with pytest.raises(ManifestError, match="bogus"):
            canonicalize(bad)

    def test_unknown_nested_key_rejected(self):
        bad = dict(self.MINIMAL, objective={"wc": 0.0, "metric": "t_tr", "extra": 1})
        with pytest.raises(ManifestError, match="extra"):
            canonicalize(bad)

    def test_bad_values_rejected(self):
        with pytest.raises(ManifestError):
            canonicalize(dict(self.MINIMAL, problem="rnn"))
        with pytest.raises(ManifestError):
            canonicalize(dict(self.MINIMAL, objective={"wc": -1, "metric": "t_tr"}))
        with pytest.raises(ManifestError):
            canonicalize(dict(self.MINIMAL, evaluator={"id": "nope"}))

    def test_build_plan_and_evaluator(self):
        manifest = canonicalize(dict(self.MINIMAL, bo={"n1": 3, "n2": 2, "n3": 10}))
        plan = build_plan(manifest)
        assert plan.stage1_bo.budget == 5
        assert plan.stage2_order == ("drop_prob",)
        evaluator = build_evaluator(manifest)
        assert evaluator.contract.id == "synthetic:mlp_capacity"

    def test_space_overrides(self):
        manifest = canonicalize(dict(self.MINIMAL, space={"max_hidden_layers": 3, "nodes": [50, 1000]}))
        plan = build_plan(manifest)
        assert plan.stage1_space.param("depth").upper == 3
        assert plan.stage1_space.param("hidden_nodes").upper == 1000


class TestExport:
    def test_columns_exact(self, tmp_path):
        rows = [{"w_c": 0.0, "acc": 0.9, "t_tr_sec": 1.0, "n_params": 10, "search_cost_sec": 5.0}]
        write_csv(rows, TRADEOFF_COLUMNS, tmp_path / "t.csv")
        header = (tmp_path / "t.csv").read_text().splitlines()[0]
        assert header == "w_c,acc,t_tr_sec,n_params,search_cost_sec"
