"""Three-stage greedy search orchestration and the experiment harnesses.

Stage 1 runs Bayesian optimization over the core architecture (layer count
and widths) with everything else at presets. Stage 2 grid-searches the
advanced architecture choices through an ordered list of sub-stages, freezing
each winner before moving on. Stage 3 runs Bayesian optimization over the
training hyperparameters with the architecture frozen. Greedy by default: one
incumbent flows between stages; ``greedy_width > 1`` carries the w best
configs out of Stage 1 and out of each branch's Stage 3 instead.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from .bayesopt import BOResult, BOSettings, bo_minimize
from .configs import (
    DOWNSAMPLE_STYLES,
    SHORTCUT_POLICIES,
    STAGE2_FRACTIONS,
    CnnArch,
    Config,
    MlpArch,
    SearchSpace,
    TrainingHP,
    expand_downsampling,
)
from .evaluators.base import DatasetInfo, Evaluator, EvaluatorError
from .evaluators.params import count_params
from .kernel import KernelSpec, kernel_spec_for
from .objective import EvalResult, ObjectiveOutcome, ObjectiveSpec, calibrate_c0, decompose, preset_lambda
from .persistence import candidate_record, eval_record
from .spaces import cnn_stage1_space, mlp_stage1_space, training_space

MLP_DROP_GRID = (0.0, 0.1, 0.3, 0.4, 0.5)
CNN_INPUT_DROP_GRID = (0.1, 0.2)
CNN_HIDDEN_DROP_GRID = (0.15, 0.3, 0.45)
CNN_SUBSTAGES = ("downsampling", "bn", "dropout", "shortcuts")
MLP_SUBSTAGES = ("drop_prob",)


def derive_seed(*parts) -> int:
    """Stable, well-spread integer seed from structured parts.

    Strings are folded with a fixed polynomial hash; Python's hash() is
    salted per process and would break cross-run determinism.
    """
    entropy = []
    for p in parts:
        if isinstance(p, str):
            acc = 0
            for ch in p:
                acc = (acc * 131 + ord(ch)) % (2 ** 32)
            entropy.append(acc)
        else:
            entropy.append(int(p) % (2 ** 32))
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass(frozen=True)
class PresetPolicy:
    """Fixed choices used while a stage is not searching them."""

    eta: float = 1e-3
    batch_size: int = 256
    lambda_profile: str = "mlp_small"
    cnn_downsample_style: str = "maxpool"
    cnn_bn_fraction: Fraction = Fraction(1)
    cnn_dropout_fraction: Fraction = Fraction(1)
    cnn_input_drop_prob: float = 0.3
    cnn_hidden_drop_prob: float = 0.3
    shortcut_depth_threshold: int = 8  # deeper configs get every_other shortcuts
    mlp_drop_prob: float = 0.2

    def apply_arch_presets(self, arch):
        if isinstance(arch, CnnArch):
            n = len(arch.channels)
            points = expand_downsampling(arch.channels)
            return CnnArch(
                channels=arch.channels,
                downsample_style=(self.cnn_downsample_style,) * len(points),
                bn_fraction=self.cnn_bn_fraction,
                dropout_fraction=self.cnn_dropout_fraction,
                input_drop_prob=self.cnn_input_drop_prob,
                hidden_drop_prob=self.cnn_hidden_drop_prob,
                shortcut_policy="every_other" if n > self.shortcut_depth_threshold else "none",
            )
        return MlpArch(hidden_nodes=arch.hidden_nodes, drop_prob=self.mlp_drop_prob)

    def training_for(self, arch, dataset: DatasetInfo) -> TrainingHP:
        n_params = count_params(arch, dataset.in_shape, dataset.n_classes)
        return TrainingHP(
            eta=self.eta,
            lam=preset_lambda(n_params, self.lambda_profile),
            batch_size=self.batch_size,
        )

    def complete_arch(self, arch, dataset: DatasetInfo) -> Config:
        """Stage-1 completion: preset advanced-arch fields and training HPs."""
        arch = self.apply_arch_presets(arch)
        return Config(arch=arch, training=self.training_for(arch, dataset))

    def complete_arch_exact(self, arch, dataset: DatasetInfo) -> Config:
        """Stage-2 completion: keep the (mutated) arch, refresh preset training HPs."""
        return Config(arch=arch, training=self.training_for(arch, dataset))


@dataclass(frozen=True)
class StagePlan:
    stage1_space: SearchSpace
    stage3_space: SearchSpace
    stage1_bo: BOSettings
    stage3_bo: BOSettings
    presets: PresetPolicy
    stage2_order: tuple[str, ...]
    search_epochs: int
    final_epochs: int
    calibration_epochs: int = 4

    def __post_init__(self):
        known = set(CNN_SUBSTAGES) | set(MLP_SUBSTAGES)
        for name in self.stage2_order:
            if name not in known:
                raise ValueError(f"unknown Stage-2 sub-stage {name!r}")


def default_plan(problem: str, stage1_bo: BOSettings | None = None,
                 stage3_bo: BOSettings | None = None, search_epochs: int = 20,
                 final_epochs: int = 60, presets: PresetPolicy | None = None,
                 stage1_space: SearchSpace | None = None,
                 stage3_space: SearchSpace | None = None,
                 stage2_order: tuple[str, ...] | None = None) -> StagePlan:
    if problem not in ("cnn", "mlp"):
        raise ValueError("problem must be 'cnn' or 'mlp'")
    if presets is None:
        presets = PresetPolicy(lambda_profile="cnn" if problem == "cnn" else "mlp_small")
    return StagePlan(
        stage1_space=stage1_space or (cnn_stage1_space() if problem == "cnn" else mlp_stage1_space()),
        stage3_space=stage3_space or training_space(),
        stage1_bo=stage1_bo or BOSettings(),
        stage3_bo=stage3_bo or BOSettings(),
        presets=presets,
        stage2_order=stage2_order or (CNN_SUBSTAGES if problem == "cnn" else MLP_SUBSTAGES),
        search_epochs=search_epochs,
        final_epochs=final_epochs,
    )


# ---------------------------------------------------------------------------
# Evaluation plumbing


class _Runner:
    """Wraps an evaluator into objective closures that trace everything."""

    def __init__(self, objective_spec: ObjectiveSpec, evaluator: Evaluator,
                 epochs: int, base_seed: int, sink: Optional[Callable[[dict], None]]):
        self.objective_spec = objective_spec
        self.evaluator = evaluator
        self.epochs = epochs
        self.base_seed = base_seed
        self.sink = sink
        self.events: list[dict] = []

    def _emit(self, record: dict) -> None:
        self.events.append(record)
        if self.sink is not None:
            self.sink(record)

    def evaluate_once(self, config: Config, stage: str, index: int, phase: str = "grid",
                      step: int | None = None, substage: str | None = None,
                      branch: int | None = None) -> ObjectiveOutcome:
        seed = derive_seed(self.base_seed, stage, substage or "", branch or 0, index)
        try:
            result = self.evaluator.evaluate(config, seed=seed, epochs=self.epochs)
        except EvaluatorError:
            raise  # unrecoverable: capability mismatch or dead process
        except Exception as exc:  # noqa: BLE001 - a bad config must not kill the search
            result = EvalResult(best_val_acc=0.0, t_tr_sec=1.0, n_params=0, epochs_run=0,
                                failed=True, reason=f"evaluator raised: {exc}")
        outcome = decompose(result, self.objective_spec)
        self._emit(eval_record(stage, index, config, outcome, seed, phase=phase,
                               step=step, substage=substage, branch=branch))
        return outcome

    def bo_objective(self, stage: str, branch: int | None = None):
        def fn(config: Config, index: int) -> ObjectiveOutcome:
            return self.evaluate_once(config, stage, index, phase="bo", branch=branch)
        return fn

    def bo_event_adapter(self, stage: str, branch: int | None = None):
        def on_event(event) -> None:
            if event.kind == "candidate":
                self._emit(candidate_record(stage, event.step, event.index, event.config,
                                            event.ei, event.mu, event.sigma, branch=branch))
        return on_event


# ---------------------------------------------------------------------------
# Stages


def run_stage1(plan: StagePlan, objective_spec: ObjectiveSpec, evaluator: Evaluator,
               seed: int, sink=None, runner: _Runner | None = None,
               branch: int | None = None) -> tuple[Config, BOResult]:
    """BO over the core architecture with presets everywhere else."""
    runner = runner or _Runner(objective_spec, evaluator, plan.search_epochs, seed, sink)
    space = plan.stage1_space
    spec = kernel_spec_for(space)
    dataset = evaluator.contract.dataset
    settings = replace(plan.stage1_bo, rng_seed=derive_seed(seed, "stage1"))
    result = bo_minimize(
        space,
        spec,
        runner.bo_objective("stage1", branch),
        settings,
        complete=lambda sample: plan.presets.complete_arch(sample, dataset),
        on_event=runner.bo_event_adapter("stage1", branch),
    )
    if result.best_config is None:
        raise EvaluatorError("stage 1 produced no evaluable config")
    return result.best_config, result


def stage2_grid(substage: str, arch) -> list:
    """The grid of architecture variants for one Stage-2 sub-stage."""
    if isinstance(arch, MlpArch):
        if substage != "drop_prob":
            raise ValueError(f"sub-stage {substage!r} does not apply to MLPs")
        return [replace(arch, drop_prob=p) for p in MLP_DROP_GRID]
    if substage == "downsampling":
        points = expand_downsampling(arch.channels)
        return [replace(arch, downsample_style=combo)
                for combo in itertools.product(DOWNSAMPLE_STYLES, repeat=len(points))]
    if substage == "bn":
        return [replace(arch, bn_fraction=f) for f in STAGE2_FRACTIONS]
    if substage == "dropout":
        return [replace(arch, dropout_fraction=f, input_drop_prob=pi, hidden_drop_prob=ph)
                for f in STAGE2_FRACTIONS
                for pi in CNN_INPUT_DROP_GRID
                for ph in CNN_HIDDEN_DROP_GRID]
    if substage == "shortcuts":
        return [replace(arch, shortcut_policy=p) for p in SHORTCUT_POLICIES]
    raise ValueError(f"unknown sub-stage {substage!r}")


def run_stage2(incumbent: Config, plan: StagePlan, objective_spec: ObjectiveSpec,
               evaluator: Evaluator, seed: int, sink=None, runner: _Runner | None = None,
               branch: int | None = None) -> tuple[Config, list[dict]]:
    """Ordered grid sub-stages; each freezes its argmin before the next runs.

    Ties on f break toward the lower complexity metric, then the lower grid
    index.
    """
    runner = runner or _Runner(objective_spec, evaluator, plan.search_epochs, seed, sink)
    dataset = evaluator.contract.dataset
    current = incumbent
    start = len([e for e in runner.events if e.get("stage") == "stage2"])
    for substage in plan.stage2_order:
        grid = stage2_grid(substage, current.arch)
        best = None  # (f, metric, grid_index, config)
        for grid_index, arch in enumerate(grid):
            config = plan.presets.complete_arch_exact(arch, dataset)
            outcome = runner.evaluate_once(config, "stage2", start, substage=substage, branch=branch)
            start += 1
            key = (outcome.f, outcome.metric_value, grid_index)
            if best is None or key < best[0]:
                best = (key, config)
        assert best is not None
        if math.isfinite(best[0][0]):
            current = best[1]
        # else: every grid point failed; keep the previous incumbent.
    stage2_events = [e for e in runner.events if e.get("stage") == "stage2"]
    return current, stage2_events


def run_stage3(incumbent: Config, plan: StagePlan, objective_spec: ObjectiveSpec,
               evaluator: Evaluator, seed: int, sink=None, runner: _Runner | None = None,
               branch: int | None = None) -> tuple[Config, BOResult]:
    """BO over (eta, lambda, batch size) with the architecture frozen."""
    runner = runner or _Runner(objective_spec, evaluator, plan.search_epochs, seed, sink)
    space = plan.stage3_space
    spec = kernel_spec_for(space)
    arch = incumbent.arch
    settings = replace(plan.stage3_bo, rng_seed=derive_seed(seed, "stage3", branch or 0))
    result = bo_minimize(
        space,
        spec,
        runner.bo_objective("stage3", branch),
        settings,
        complete=lambda hp: Config(arch=arch, training=hp),
        on_event=runner.bo_event_adapter("stage3", branch),
    )
    if result.best_config is None:
        raise EvaluatorError("stage 3 produced no evaluable config")
    return result.best_config, result


# ---------------------------------------------------------------------------
# Full runs


@dataclass
class BranchResult:
    stage1_pick: Config
    stage2_incumbent: Config
    stage3_result: BOResult
    finals: list[tuple[Config, float]]


@dataclass
class SearchRun:
    plan: StagePlan
    objective_spec: ObjectiveSpec
    evaluator_id: str
    seed: int
    greedy_width: int
    stage1_result: BOResult
    branches: list[BranchResult]
    finals: list[tuple[Config, float]] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    @property
    def best(self) -> tuple[Config, float]:
        return self.finals[0]


def _top_configs(result: BOResult, width: int) -> list[tuple[Config, float]]:
    """The ``width`` best distinct evaluated configs, by (f, evaluation order)."""
    seen = set()
    ranked = []
    evals = [e for e in result.events if e.kind == "eval" and math.isfinite(e.outcome.f)]
    for event in sorted(evals, key=lambda e: (e.outcome.f, e.index)):
        if event.config in seen:
            continue
        seen.add(event.config)
        ranked.append((event.config, event.outcome.f))
        if len(ranked) == width:
            break
    if not ranked:
        raise EvaluatorError("no finite evaluation to select from")
    return ranked


def space_fingerprint(space: SearchSpace) -> str:
    return "|".join(f"{p.name}:{p.lower}:{p.upper}:{p.scale}" for p in space.params) \
        + f"#{space.family}"


def calibrate(plan: StagePlan, w_c: float, metric: str, evaluator: Evaluator,
              runner: _Runner | None = None, cache_path=None) -> ObjectiveSpec:
    """Build the run's ObjectiveSpec, measuring c0 when the penalty is active.

    ``cache_path`` (a JSON file) memoizes c0 per (space, evaluator, metric)
    so sweeps over w_c calibrate once.
    """
    if w_c == 0:
        return ObjectiveSpec(w_c=0.0, metric=metric, c0=1.0)
    key = {"space": space_fingerprint(plan.stage1_space),
           "evaluator": evaluator.contract.id, "metric": metric}
    if cache_path is not None:
        from pathlib import Path

        cache_file = Path(cache_path)
        if cache_file.exists():
            from .persistence import load_json

            cached = load_json(cache_file)
            if cached.get("key") == key:
                return ObjectiveSpec(w_c=w_c, metric=metric, c0=float(cached["c0"]))
    dataset = evaluator.contract.dataset
    c0, config, result = calibrate_c0(
        plan.stage1_space,
        evaluator,
        metric,
        complete=lambda sample: plan.presets.complete_arch(sample, dataset),
        epochs=plan.calibration_epochs,
    )
    spec = ObjectiveSpec(w_c=w_c, metric=metric, c0=c0)
    if runner is not None and result is not None:
        runner._emit(eval_record("calibration", 0, config, decompose(result, spec), 0,
                                 phase="calibration"))
    if cache_path is not None:
        from .persistence import dump_json

        dump_json({"key": key, "c0": c0}, cache_path)
    return spec


def run_full(plan: StagePlan, w_c: float, metric: str, evaluator: Evaluator,
             seed: int, greedy_width: int = 1, sink=None, c0_cache=None) -> SearchRun:
    """The whole pipeline; width 1 is pure greedy, width w yields w^2 finals."""
    if greedy_width < 1:
        raise ValueError("greedy_width must be >= 1")
    probe = _Runner(ObjectiveSpec(w_c=0.0, metric=metric, c0=1.0), evaluator,
                    plan.search_epochs, seed, sink)
    objective_spec = calibrate(plan, w_c, metric, evaluator, runner=probe,
                               cache_path=c0_cache)
    runner = _Runner(objective_spec, evaluator, plan.search_epochs, seed, sink)
    runner.events = probe.events  # keep the calibration record in the run's event list

    _, stage1_result = run_stage1(plan, objective_spec, evaluator, seed, runner=runner)
    picks = _top_configs(stage1_result, greedy_width)

    branches: list[BranchResult] = []
    for b, (pick, _) in enumerate(picks):
        branch_tag = None if greedy_width == 1 else b
        branch_seed = derive_seed(seed, "branch", b)
        stage2_incumbent, _ = run_stage2(pick, plan, objective_spec, evaluator,
                                         branch_seed, runner=runner, branch=branch_tag)
        _, stage3_result = run_stage3(stage2_incumbent, plan, objective_spec, evaluator,
                                      branch_seed, runner=runner, branch=branch_tag)
        finals = _top_configs(stage3_result, greedy_width)
        branches.append(BranchResult(pick, stage2_incumbent, stage3_result, finals))

    all_finals = sorted((f for br in branches for f in br.finals), key=lambda cf: cf[1])
    return SearchRun(plan=plan, objective_spec=objective_spec, evaluator_id=evaluator.contract.id,
                     seed=seed, greedy_width=greedy_width, stage1_result=stage1_result,
                     branches=branches, finals=all_finals, events=runner.events)


def search_transfer(source_config: Config, plan: StagePlan, w_c: float, metric: str,
                    target_evaluator: Evaluator, seed: int, sink=None) -> tuple[Config, BOResult, SearchRun]:
    """Rerun only Stage 3 for a source architecture on a different evaluator.

    Fails before any training if the architecture cannot run on the target's
    input shape.
    """
    dataset = target_evaluator.contract.dataset
    if isinstance(source_config.arch, CnnArch):
        if not target_evaluator.contract.supports_cnn:
            raise EvaluatorError("target evaluator does not support CNN architectures")
        if len(dataset.in_shape) != 3:
            raise EvaluatorError(f"CNN architecture incompatible with input shape {dataset.in_shape}")
    else:
        if not target_evaluator.contract.supports_mlp:
            raise EvaluatorError("target evaluator does not support MLP architectures")

    probe = _Runner(ObjectiveSpec(w_c=0.0, metric=metric, c0=1.0), target_evaluator,
                    plan.search_epochs, seed, sink)
    objective_spec = calibrate(plan, w_c, metric, target_evaluator, runner=probe)
    runner = _Runner(objective_spec, target_evaluator, plan.search_epochs, seed, sink)
    runner.events = probe.events
    final, stage3_result = run_stage3(source_config, plan, objective_spec, target_evaluator,
                                      seed, runner=runner)
    run = SearchRun(plan=plan, objective_spec=objective_spec,
                    evaluator_id=target_evaluator.contract.id, seed=seed, greedy_width=1,
                    stage1_result=stage3_result, branches=[], finals=_top_configs(stage3_result, 1),
                    events=runner.events)
    return final, stage3_result, run


def final_retrain(config: Config, evaluator: Evaluator, epochs: int, seed: int = 0,
                  runner: _Runner | None = None) -> EvalResult:
    """Optional post-search step: retrain on train+val, evaluate on test.

    Evaluators own their dataset splits; ``split="final"`` asks for the
    combined training set and the held-out test set.
    """
    result = evaluator.evaluate(config, seed=seed, epochs=epochs, split="final")
    if runner is not None:
        runner._emit(eval_record("final_retrain", 0, config,
                                 decompose(result, runner.objective_spec), seed,
                                 phase="final"))
    return result


def ensemble_select(stage3_result: BOResult, n: int, settings: BOSettings) -> tuple[list[tuple[Config, float]], dict]:
    """The n best Stage-3 configs plus the majority-vote inference descriptor.

    Free of extra search cost only while n <= n1 + n2; larger n raises.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > settings.budget:
        raise ValueError(f"ensemble of {n} exceeds the search budget n1 + n2 = {settings.budget}")
    members = _top_configs(stage3_result, n)
    descriptor = {
        "method": "majority_vote",
        "tie_break": "highest_mean_softmax",
        "n": len(members),
    }
    return members, descriptor


# ---------------------------------------------------------------------------
# Strategy comparison (random / grid / balanced / extreme)


def compare_modes(space: SearchSpace, spec: KernelSpec, complete, evaluator: Evaluator,
                  w_c: float, metric: str, modes, seeds, n3: int = 1000,
                  epochs: int | None = None, c0: float | None = None) -> list[dict]:
    """Run each strategy mode at matched budget; one row per (mode, seed)."""
    rows = []
    if c0 is None:
        c0 = 1.0
    objective_spec = ObjectiveSpec(w_c=w_c, metric=metric, c0=c0)
    for mode in modes:
        for seed in seeds:
            runner = _Runner(objective_spec, evaluator,
                             epochs or evaluator.contract.epochs, seed, None)
            settings = BOSettings.for_mode(mode, rng_seed=derive_seed(seed, mode), n3=n3)
            result = bo_minimize(space, spec, runner.bo_objective(f"compare:{mode}"),
                                 settings, complete=complete)
            rows.append({
                "mode": mode,
                "seed": seed,
                "w_c": w_c,
                "final_f": result.best_f,
                "evaluations": result.n_evaluations,
            })
    return rows
