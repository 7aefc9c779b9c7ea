"""Command-line entry points.

Verbs: ``search`` (full three-stage run, optionally swept over w_c),
``compare`` (random / grid / balanced / extreme strategy comparison),
``transfer`` (rerun Stage 3 of a finished run against a new evaluator),
``ensemble`` (select the n best Stage-3 configs of a finished run), and
``export`` (plot-ready performance/complexity table across runs).

Exit codes: 0 success, 1 usage or manifest error, 2 evaluator failure,
3 internal error. ``LEANSEARCH_OUT`` sets the default output root.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

from . import persistence
from .evaluators.base import EvaluatorError
from .manifest import ManifestError, build_evaluator, build_plan, canonicalize, dump_manifest, load_manifest
from .objective import CalibrationError
from .pipeline import compare_modes, run_full, search_transfer
from .configs import decode_config
from .kernel import kernel_spec_for

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_EVALUATOR = 2
EXIT_INTERNAL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; usage errors are 1 here
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _out_root() -> Path:
    return Path(os.environ.get("LEANSEARCH_OUT", "runs"))


def _resolve_out(flag_value, manifest, suffix: str) -> Path:
    if flag_value:
        return Path(flag_value)
    if manifest.get("out_dir"):
        return Path(manifest["out_dir"])
    ev = manifest["evaluator"]["id"]
    return _out_root() / f"{manifest['problem']}-{ev}-{suffix}"


def _parse_float_list(text: str) -> list[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _run_one(manifest: dict, out_dir: Path, retrain: bool = False,
             c0_cache: Path | None = None) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = build_plan(manifest)
    wall_start = time.time()
    with build_evaluator(manifest) as evaluator, \
            persistence.TraceWriter(out_dir / "trace.jsonl") as trace:
        run = run_full(
            plan,
            w_c=float(manifest["objective"]["wc"]),
            metric=manifest["objective"]["metric"],
            evaluator=evaluator,
            seed=int(manifest["seed"]),
            greedy_width=int(manifest["greedy_width"]),
            sink=trace,
            c0_cache=c0_cache if c0_cache is not None else out_dir / "c0.json",
        )
        if retrain:
            from .pipeline import _Runner, final_retrain

            runner = _Runner(run.objective_spec, evaluator, plan.final_epochs,
                             int(manifest["seed"]), trace)
            final_retrain(run.best[0], evaluator, plan.final_epochs,
                          seed=int(manifest["seed"]), runner=runner)
    (out_dir / "manifest.json").write_text(dump_manifest(manifest), encoding="utf-8")
    summary = persistence.summarize(persistence.read_trace(out_dir / "trace.jsonl"), manifest)
    persistence.dump_json(summary, out_dir / "summary.json")
    persistence.dump_json(
        {"wall_clock_sec": time.time() - wall_start, "started_at": wall_start,
         "finals": len(run.finals)},
        out_dir / "run_meta.json",
    )
    best, best_f = run.best
    print(f"[{out_dir.name}] final f={best_f:.6f} "
          f"acc={summary['final']['best_val_acc']:.4f} "
          f"t_tr={summary['final']['t_tr_sec']:.4g}s n_params={summary['final']['n_params']}")
    return out_dir


def cmd_search(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest["seed"] = args.seed
    if args.evaluator is not None:
        manifest["evaluator"]["id"] = args.evaluator
        manifest = canonicalize(manifest)
    if args.greedy_width is not None:
        manifest["greedy_width"] = args.greedy_width
    wcs = _parse_float_list(args.wc) if args.wc else [float(manifest["objective"]["wc"])]
    base = _resolve_out(args.out, manifest, f"seed{manifest['seed']}")
    if len(wcs) == 1:
        manifest["objective"]["wc"] = wcs[0]
        _run_one(manifest, base, retrain=args.final_retrain)
    else:
        for wc in wcs:  # one sub-run per w_c value, sharing one c0 calibration
            sub = dict(manifest)
            sub["objective"] = dict(manifest["objective"], wc=wc)
            _run_one(canonicalize(sub), base / f"wc_{wc:g}", retrain=args.final_retrain,
                     c0_cache=base / "c0.json")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .pipeline import PresetPolicy, calibrate

    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest["seed"] = args.seed
    modes = args.mode.split(",") if args.mode else (manifest["modes"] or ["random", "grid", "balanced", "extreme"])
    seeds = manifest["seeds"] or [manifest["seed"] + i for i in range(10)]
    wcs = _parse_float_list(args.wc) if args.wc else [float(manifest["objective"]["wc"])]
    metric = manifest["objective"]["metric"]
    plan = build_plan(manifest)
    out_dir = _resolve_out(args.out, manifest, "compare")
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    with build_evaluator(manifest) as evaluator:
        dataset = evaluator.contract.dataset
        space = plan.stage1_space
        spec = kernel_spec_for(space)
        complete = lambda sample: plan.presets.complete_arch(sample, dataset)  # noqa: E731
        for wc in wcs:
            objective = calibrate(plan, wc, metric, evaluator)
            rows.extend(compare_modes(space, spec, complete, evaluator, wc, metric,
                                      modes, seeds, n3=plan.stage1_bo.n3,
                                      epochs=plan.search_epochs, c0=objective.c0))
    persistence.write_csv(rows, ("w_c", "mode", "seed", "final_f", "evaluations"),
                          out_dir / "comparison.csv")
    print(f"{'w_c':>8} {'mode':>10} {'median f':>12} {'evals':>6}")
    for wc in wcs:
        for mode in modes:
            fs = sorted(r["final_f"] for r in rows if r["mode"] == mode and r["w_c"] == wc)
            median = fs[len(fs) // 2] if len(fs) % 2 else 0.5 * (fs[len(fs) // 2 - 1] + fs[len(fs) // 2])
            evals = next(r["evaluations"] for r in rows if r["mode"] == mode and r["w_c"] == wc)
            print(f"{wc:>8g} {mode:>10} {median:>12.6f} {evals:>6}")
    print(f"rows written to {out_dir / 'comparison.csv'}")
    return EXIT_OK


def cmd_transfer(args) -> int:
    source_dir = Path(args.source)
    summary = persistence.load_json(source_dir / "summary.json")
    incumbents = summary.get("stage_incumbents", {})
    if "stage2" not in incumbents:
        raise ManifestError(f"source run {source_dir} has no Stage-2 incumbent")
    source_config = decode_config(incumbents["stage2"]["config"])

    manifest = load_manifest(args.manifest)
    if args.seed is not None:
        manifest["seed"] = args.seed
    plan = build_plan(manifest)
    out_dir = _resolve_out(args.out, manifest, f"transfer-seed{manifest['seed']}")
    out_dir.mkdir(parents=True, exist_ok=True)
    wall_start = time.time()
    with build_evaluator(manifest) as evaluator, \
            persistence.TraceWriter(out_dir / "trace.jsonl") as trace:
        final, _, _ = search_transfer(source_config, plan,
                                      w_c=float(manifest["objective"]["wc"]),
                                      metric=manifest["objective"]["metric"],
                                      target_evaluator=evaluator,
                                      seed=int(manifest["seed"]), sink=trace)
    (out_dir / "manifest.json").write_text(dump_manifest(manifest), encoding="utf-8")
    summary = persistence.summarize(persistence.read_trace(out_dir / "trace.jsonl"), manifest)
    summary["transferred_from"] = source_dir.name
    persistence.dump_json(summary, out_dir / "summary.json")
    persistence.dump_json({"wall_clock_sec": time.time() - wall_start, "started_at": wall_start},
                          out_dir / "run_meta.json")
    print(f"[{out_dir.name}] transferred architecture from {source_dir.name}; "
          f"final f={summary['final']['f']}")
    return EXIT_OK


def cmd_ensemble(args) -> int:
    run_dir = Path(args.run)
    manifest = persistence.load_json(run_dir / "manifest.json")
    budget = int(manifest["bo"]["n1"]) + int(manifest["bo"]["n2"])
    if args.n > budget:
        print(f"error: ensemble of {args.n} exceeds the search budget n1 + n2 = {budget}",
              file=sys.stderr)
        return EXIT_USAGE
    records = persistence.read_trace(run_dir / "trace.jsonl")
    stage3 = [r for r in records if r["event"] == "eval" and r["stage"] == "stage3"
              and r["status"] == "ok" and r.get("branch") is None]
    stage3.sort(key=lambda r: (float(r["f"]) if r["f"] != "inf" else math.inf, r["index"]))
    members, seen = [], set()
    for record in stage3:
        key = tuple(sorted(record["config"].items()))
        if key in seen:
            continue
        seen.add(key)
        members.append(record)
        if len(members) == args.n:
            break
    if len(members) < args.n:
        print(f"error: only {len(members)} distinct Stage-3 configs available", file=sys.stderr)
        return EXIT_USAGE
    payload = {
        "configs": [m["config"] for m in members],
        "f": [m["f"] for m in members],
        "vote": {"method": "majority_vote", "tie_break": "highest_mean_softmax", "n": args.n},
        "effective_n_params": args.n * int(members[0]["n_params"]),
    }
    persistence.dump_json(payload, run_dir / "ensemble.json")
    print(f"wrote ensemble of {args.n} (effective params {payload['effective_n_params']}) "
          f"to {run_dir / 'ensemble.json'}")
    return EXIT_OK


def cmd_export(args) -> int:
    run_dirs = [Path(p) for p in args.runs.split(",")] if args.runs else sorted(
        p for p in Path(args.out or ".").iterdir() if (p / "summary.json").exists()
    )
    rows = persistence.export_tradeoff(run_dirs)
    out = Path(args.out_file) if args.out_file else Path("tradeoff.csv")
    persistence.write_csv(rows, persistence.TRADEOFF_COLUMNS, out)
    print(",".join(persistence.TRADEOFF_COLUMNS))
    for row in rows:
        print(",".join(str(row[c]) for c in persistence.TRADEOFF_COLUMNS))
    print(f"written to {out}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="leansearch", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--manifest", required=True, help="path to the run manifest (JSON)")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")

    p = sub.add_parser("search", help="run the three-stage search")
    common(p)
    p.add_argument("--wc", default=None, help="comma list of w_c values to sweep")
    p.add_argument("--evaluator", default=None, help="override the evaluator id")
    p.add_argument("--greedy-width", type=int, default=None)
    p.add_argument("--final-retrain", action="store_true",
                   help="retrain the winner on train+val and score it on the test set")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("compare", help="compare search strategies at matched budget")
    common(p)
    p.add_argument("--mode", default=None, help="comma list from random,grid,balanced,extreme")
    p.add_argument("--wc", default=None, help="comma list of w_c values")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("transfer", help="rerun Stage 3 of a finished run on a new evaluator")
    common(p)
    p.add_argument("--source", required=True, help="source run directory (completed Stage 2)")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("ensemble", help="select the n best Stage-3 configs of a run")
    p.add_argument("--run", required=True, help="finished run directory")
    p.add_argument("-n", type=int, required=True)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("export", help="export the performance/complexity trade-off table")
    p.add_argument("--runs", default=None, help="comma list of run directories")
    p.add_argument("--out", default=None, help="directory to scan when --runs is omitted")
    p.add_argument("--out-file", default=None, help="CSV output path")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluatorError, CalibrationError) as exc:
        print(f"evaluator error: {exc}", file=sys.stderr)
        return EXIT_EVALUATOR
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
