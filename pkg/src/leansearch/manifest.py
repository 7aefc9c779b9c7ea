"""Run-manifest parsing: a declarative JSON document describing one search.

Unknown keys are rejected at every level so typos fail loudly. Parsing then
serializing then parsing is a fixed point: ``canonicalize`` fills every
default, and serialization is key-sorted JSON.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .bayesopt import MODES, BOSettings
from .evaluators.base import DatasetInfo, Evaluator
from .pipeline import CNN_SUBSTAGES, MLP_SUBSTAGES, PresetPolicy, StagePlan, default_plan
from .spaces import cnn_stage1_space, mlp_stage1_space, training_space


class ManifestError(ValueError):
    """Malformed manifest; maps to the CLI usage exit code."""


_DEFAULTS = {
    "problem": None,  # required
    "seed": 0,
    "out_dir": None,
    "objective": {"wc": 0.0, "metric": "t_tr"},
    "evaluator": None,  # required
    "epochs": {"search": 20, "final": 60, "calibration": 4},
    "bo": {"mode": "balanced", "n1": 15, "n2": 15, "n3": 1000, "xi": 1e-4, "sigma_n2": 1e-4},
    "space": {},
    "stage2_order": None,
    "greedy_width": 1,
    "seeds": None,
    "modes": None,
    "lambda_profile": None,
}

_EVALUATOR_KEYS = {
    "synthetic": {"id", "family", "noise", "t_base", "fail_above_params"},
    "builtin_mlp": {"id", "dataset", "dataset_seed", "timeout_sec"},
    "external": {"id", "cmd", "dataset", "timeout_sec"},
}

_SPACE_KEYS = {
    "min_layers", "max_layers", "first_channels",  # cnn stage 1
    "max_hidden_layers", "nodes",  # mlp stage 1
    "eta", "lambda", "batch",  # stage 3
}


def _check_keys(section: dict, allowed, where: str) -> None:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ManifestError(f"unknown keys in {where}: {sorted(unknown)}")


def canonicalize(raw: dict) -> dict:
    """Validate and fill defaults; raises ManifestError on any problem."""
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a JSON object")
    _check_keys(raw, _DEFAULTS, "manifest")
    m = copy.deepcopy(_DEFAULTS)
    for key, value in raw.items():
        if isinstance(_DEFAULTS[key], dict) and isinstance(value, dict):
            merged = dict(_DEFAULTS[key])
            merged.update(value)
            m[key] = merged
        else:
            m[key] = copy.deepcopy(value)

    if m["problem"] not in ("cnn", "mlp"):
        raise ManifestError(f"problem must be 'cnn' or 'mlp', got {m['problem']!r}")
    _check_keys(m["objective"], {"wc", "metric"}, "objective")
    if m["objective"]["metric"] not in ("t_tr", "n_params"):
        raise ManifestError(f"objective.metric must be t_tr or n_params")
    if float(m["objective"]["wc"]) < 0:
        raise ManifestError("objective.wc must be non-negative")
    _check_keys(m["epochs"], {"search", "final", "calibration"}, "epochs")
    _check_keys(m["bo"], {"mode", "n1", "n2", "n3", "xi", "sigma_n2"}, "bo")
    if m["bo"]["mode"] not in MODES:
        raise ManifestError(f"bo.mode must be one of {MODES}")
    _check_keys(m["space"], _SPACE_KEYS, "space")

    ev = m["evaluator"]
    if not isinstance(ev, dict) or "id" not in ev:
        raise ManifestError("evaluator section with an 'id' is required")
    if ev["id"] not in _EVALUATOR_KEYS:
        raise ManifestError(f"unknown evaluator id {ev['id']!r}; choose from {sorted(_EVALUATOR_KEYS)}")
    _check_keys(ev, _EVALUATOR_KEYS[ev["id"]], f"evaluator ({ev['id']})")

    if m["stage2_order"] is not None:
        known = set(CNN_SUBSTAGES) | set(MLP_SUBSTAGES)
        for name in m["stage2_order"]:
            if name not in known:
                raise ManifestError(f"unknown stage2 sub-stage {name!r}")
    if int(m["greedy_width"]) < 1:
        raise ManifestError("greedy_width must be >= 1")
    if m["lambda_profile"] is not None and m["lambda_profile"] not in ("cnn", "mlp_small", "mlp_large"):
        raise ManifestError(f"unknown lambda_profile {m['lambda_profile']!r}")
    if m["modes"] is not None:
        bad = set(m["modes"]) - set(MODES)
        if bad:
            raise ManifestError(f"unknown modes: {sorted(bad)}")
    return m


def load_manifest(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ManifestError(f"manifest not found: {path}")
    except json.JSONDecodeError as exc:
        raise ManifestError(f"manifest is not valid JSON: {exc}")
    return canonicalize(raw)


def dump_manifest(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2) + "\n"


def build_plan(manifest: dict) -> StagePlan:
    problem = manifest["problem"]
    space_cfg = manifest["space"]
    bo = manifest["bo"]
    settings = BOSettings(n1=int(bo["n1"]), n2=int(bo["n2"]), n3=int(bo["n3"]),
                          xi=float(bo["xi"]), sigma_n2=float(bo["sigma_n2"]), mode=bo["mode"])
    if problem == "cnn":
        stage1 = cnn_stage1_space(
            min_layers=int(space_cfg.get("min_layers", 4)),
            max_layers=int(space_cfg.get("max_layers", 16)),
            first_channels=tuple(space_cfg.get("first_channels", (16, 64))),
        )
    else:
        stage1 = mlp_stage1_space(
            max_hidden_layers=int(space_cfg.get("max_hidden_layers", 2)),
            nodes=tuple(space_cfg.get("nodes", (20, 400))),
        )
    stage3 = training_space(
        eta_bounds=tuple(space_cfg.get("eta", (1e-5, 1e-1))),
        lambda_bounds=tuple(space_cfg.get("lambda", (1e-6, 1e-3))),
        batch_bounds=tuple(space_cfg.get("batch", (32, 512))),
    )
    profile = manifest["lambda_profile"] or ("cnn" if problem == "cnn" else "mlp_small")
    presets = PresetPolicy(lambda_profile=profile)
    order = tuple(manifest["stage2_order"]) if manifest["stage2_order"] else None
    return default_plan(
        problem,
        stage1_bo=settings,
        stage3_bo=settings,
        search_epochs=int(manifest["epochs"]["search"]),
        final_epochs=int(manifest["epochs"]["final"]),
        presets=presets,
        stage1_space=stage1,
        stage3_space=stage3,
        stage2_order=order,
    )


def build_evaluator(manifest: dict) -> Evaluator:
    ev = manifest["evaluator"]
    epochs = int(manifest["epochs"]["search"])
    if ev["id"] == "synthetic":
        from .evaluators.synthetic import SyntheticEvaluator

        fail_above = ev.get("fail_above_params")
        fail_when = None
        if fail_above is not None:
            from .evaluators.params import count_params

            def fail_when(config, _limit=float(fail_above)):  # noqa: E731
                info = evaluator.contract.dataset
                return count_params(config.arch, info.in_shape, info.n_classes) > _limit

        evaluator = SyntheticEvaluator(
            family=ev.get("family", "mlp_capacity"),
            noise=float(ev.get("noise", 0.0)),
            epochs=epochs,
            t_base=float(ev.get("t_base", 10.0)),
            fail_when=fail_when,
        )
        return evaluator
    if ev["id"] == "builtin_mlp":
        from .datasets import DATASETS
        from .evaluators.mlp import BuiltinMlpTrainer

        name = ev.get("dataset", "digits")
        if name not in DATASETS:
            raise ManifestError(f"unknown dataset {name!r}; choose from {sorted(DATASETS)}")
        data = DATASETS[name](seed=int(ev.get("dataset_seed", 0)))
        return BuiltinMlpTrainer(data, epochs=epochs, timeout_sec=float(ev.get("timeout_sec", 600.0)))
    if ev["id"] == "external":
        from .evaluators.external import ExternalEvaluator

        dataset_cfg = ev.get("dataset")
        if not isinstance(dataset_cfg, dict):
            raise ManifestError("external evaluator needs a dataset {name, in_shape, classes} block")
        _check_keys(dataset_cfg, {"name", "in_shape", "classes"}, "evaluator.dataset")
        info = DatasetInfo(
            name=str(dataset_cfg.get("name", "external")),
            in_shape=tuple(int(x) for x in dataset_cfg["in_shape"]),
            n_classes=int(dataset_cfg["classes"]),
        )
        cmd = ev.get("cmd")
        if not isinstance(cmd, list) or not cmd:
            raise ManifestError("external evaluator needs a non-empty cmd list")
        return ExternalEvaluator([str(c) for c in cmd], info, epochs=epochs,
                                 timeout_sec=float(ev.get("timeout_sec", 600.0)))
    raise ManifestError(f"unknown evaluator id {ev['id']!r}")
