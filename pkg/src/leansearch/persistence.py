"""Run persistence: line-delimited traces, recomputable summaries, exports.

The trace is append-only JSONL, one record per evaluation and per scored
candidate, flushed per line so a crashed run keeps everything it paid for.
Summaries are recomputed from the trace alone (no hidden state) and contain
no wall-clock values, so reruns of the same manifest + seed with a
deterministic evaluator are byte-identical. Wall-clock cost lives in
run_meta.json, outside the determinism contract.
"""
from __future__ import annotations

import json
import math
import os
import time
from pathlib import Path
from typing import Iterable

from .configs import Config, config_to_pairs


def _json_safe(value):
    if isinstance(value, float) and math.isinf(value):
        return "inf"
    return value


def eval_record(stage: str, index: int, config: Config, outcome, seed: int,
                phase: str = "grid", step: int | None = None, substage: str | None = None,
                branch: int | None = None) -> dict:
    result = outcome.result
    return {
        "event": "eval",
        "stage": stage,
        "substage": substage,
        "branch": branch,
        "phase": phase,
        "step": step,
        "index": index,
        "config": dict(config_to_pairs(config)),
        "f": _json_safe(outcome.f),
        "f_p": _json_safe(outcome.f_p),
        "f_c": _json_safe(outcome.f_c),
        "metric": _json_safe(outcome.metric_value),
        "status": "failed" if result.failed else "ok",
        "reason": result.reason or None,
        "best_val_acc": result.best_val_acc,
        "t_tr_sec": result.t_tr_sec,
        "n_params": result.n_params,
        "epochs_run": result.epochs_run,
        "seed": seed,
    }


def candidate_record(stage: str, step: int, index: int, config: Config,
                     ei: float, mu: float, sigma: float, branch: int | None = None) -> dict:
    return {
        "event": "candidate",
        "stage": stage,
        "branch": branch,
        "step": step,
        "index": index,
        "ei": ei,
        "mu": None if math.isnan(mu) else mu,
        "sigma": None if math.isnan(sigma) else sigma,
        "config": dict(config_to_pairs(config)),
    }


class TraceWriter:
    """Single-writer append-only JSONL sink with monotone timestamps."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "a", encoding="utf-8")
        self._last_ts = 0.0

    def __call__(self, record: dict) -> None:
        ts = time.time()
        if ts <= self._last_ts:
            ts = self._last_ts + 1e-6
        self._last_ts = ts
        record = {"ts": ts, **record}
        self._fh.write(json.dumps(record, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def read_trace(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def _f_of(record: dict) -> float:
    return math.inf if record["f"] == "inf" else float(record["f"])


def summarize(records: Iterable[dict], manifest: dict | None = None) -> dict:
    """Build the run summary from trace records alone.

    ``search_cost_sec`` aggregates evaluator-reported per-epoch time times
    epochs over every evaluation: deterministic for deterministic evaluators
    and the dominant real cost for training ones.
    """
    evals = [r for r in records if r.get("event") == "eval"]
    counts: dict[str, int] = {}
    cost = 0.0
    for r in evals:
        counts[r["stage"]] = counts.get(r["stage"], 0) + 1
        if r["status"] == "ok":
            cost += float(r["t_tr_sec"]) * int(r["epochs_run"])
    counts["total"] = len(evals)

    stage3 = [r for r in evals if r["stage"] == "stage3" and r["status"] == "ok"]
    pool = stage3 if stage3 else [r for r in evals if r["status"] == "ok"]
    summary: dict = {
        "evaluations": counts,
        "search_cost_sec": cost,
    }
    if pool:
        best = min(pool, key=lambda r: (_f_of(r), r["index"]))
        summary["final"] = {
            "config": best["config"],
            "f": best["f"],
            "f_p": best["f_p"],
            "f_c": best["f_c"],
            "metric": best["metric"],
            "best_val_acc": best["best_val_acc"],
            "t_tr_sec": best["t_tr_sec"],
            "n_params": best["n_params"],
        }
        incumbents = {}
        for stage in ("stage1", "stage2", "stage3"):
            stage_ok = [r for r in evals if r["stage"] == stage and r["status"] == "ok"]
            if stage_ok:
                winner = min(stage_ok, key=lambda r: (_f_of(r), r["index"]))
                incumbents[stage] = {"config": winner["config"], "f": winner["f"]}
        summary["stage_incumbents"] = incumbents
    if manifest is not None:
        summary["manifest"] = manifest
    return summary


def dump_json(payload: dict, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def load_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


TRADEOFF_COLUMNS = ("w_c", "acc", "t_tr_sec", "n_params", "search_cost_sec")


def export_tradeoff(run_dirs: Iterable[str | Path]) -> list[dict]:
    """One plot-ready row per run directory, sorted by w_c."""
    rows = []
    for run_dir in run_dirs:
        run_dir = Path(run_dir)
        summary = load_json(run_dir / "summary.json")
        manifest = summary.get("manifest", {})
        final = summary.get("final")
        if final is None:
            continue
        rows.append({
            "w_c": manifest.get("objective", {}).get("wc", 0.0),
            "acc": final["best_val_acc"],
            "t_tr_sec": final["t_tr_sec"],
            "n_params": final["n_params"],
            "search_cost_sec": summary["search_cost_sec"],
        })
    rows.sort(key=lambda r: r["w_c"])
    return rows


def write_csv(rows: list[dict], columns: tuple[str, ...], path: str | Path) -> None:
    import csv

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in columns})
