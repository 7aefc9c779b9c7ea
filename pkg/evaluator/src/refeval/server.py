"""The evaluator process: line-delimited JSON over stdin/stdout.

Handshake: ``{"type":"hello","version":1}`` is answered with
``{"type":"hello","version":1,"capabilities":["cnn","mlp","vote"]}``.
Evaluate requests carry a flat config object, an epoch budget, and a seed;
they are answered with a result record (plus the structural digest of the
network actually built) or an error record. Any exception becomes an error
record and the process keeps serving.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import torch

from . import PROTOCOL_VERSION
from .builder import ConfigFormatError, build_network, n_params, structure_digest
from .datasets import load_dataset
from .training import TrainingDiverged, train_model
from .vote import vote_inference


def _reply(record: dict) -> None:
    sys.stdout.write(json.dumps(record, separators=(",", ":")) + "\n")
    sys.stdout.flush()


def _handle_evaluate(record: dict, data, args) -> dict:
    request_id = record.get("id")
    config = record.get("config")
    if not isinstance(config, dict):
        return {"type": "error", "id": request_id, "reason": "config must be a flat object"}
    epochs = int(record.get("epochs", 10))
    seed = int(record.get("seed", 0))
    split = str(record.get("split", "search"))
    try:
        eta = float(config["eta"])
        lam = float(config["lambda"])
        batch = int(config["batch_size"])
        torch.manual_seed(seed)  # seeds weight init; the loop uses its own generator
        model = build_network(config, data.in_shape, data.n_classes)
        params = n_params(model)
        digest = structure_digest(model)
        outcome = train_model(model, data, eta=eta, lam=lam, batch_size=batch,
                              epochs=epochs, seed=seed, device=args.device,
                              split=split, augment=args.augment)
    except (ConfigFormatError, TrainingDiverged, KeyError, ValueError) as exc:
        return {"type": "error", "id": request_id, "reason": f"{type(exc).__name__}: {exc}"}
    except Exception as exc:  # noqa: BLE001 - stay alive whatever training throws
        return {"type": "error", "id": request_id, "reason": f"internal: {type(exc).__name__}: {exc}"}

    if args.weights_dir:
        weights_dir = Path(args.weights_dir)
        weights_dir.mkdir(parents=True, exist_ok=True)
        torch.save({"config": config, "state": model.state_dict()},
                   weights_dir / f"model_{request_id}.pt")
    return {
        "type": "result",
        "id": request_id,
        "best_val_acc": outcome.best_val_acc,
        "t_tr_sec": outcome.t_tr_sec,
        "n_params": params,
        "epochs_run": outcome.epochs_run,
        "digest": digest,
    }


def serve(args) -> int:
    classes = tuple(int(c) for c in args.classes.split(",")) if args.classes else None
    data = load_dataset(args.dataset, seed=args.split_seed, classes=classes)
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            _reply({"type": "error", "id": None, "reason": "request is not valid JSON"})
            continue
        kind = record.get("type")
        if kind == "hello":
            if record.get("version") != PROTOCOL_VERSION:
                _reply({"type": "error", "id": None,
                        "reason": f"unsupported protocol version {record.get('version')!r}"})
                continue
            _reply({"type": "hello", "version": PROTOCOL_VERSION,
                    "capabilities": ["cnn", "mlp", "vote"]})
        elif kind == "evaluate":
            _reply(_handle_evaluate(record, data, args))
        else:
            _reply({"type": "error", "id": record.get("id"),
                    "reason": f"unknown record type {kind!r}"})
    return 0


def cmd_vote(args) -> int:
    classes = tuple(int(c) for c in args.classes.split(",")) if args.classes else None
    data = load_dataset(args.dataset, seed=args.split_seed, classes=classes)
    paths = sorted(Path(args.weights_dir).glob("model_*.pt")) if not args.models else [
        Path(args.weights_dir) / f"model_{m}.pt" for m in args.models.split(",")]
    if not paths:
        print("no saved models found", file=sys.stderr)
        return 1
    tic = time.perf_counter()
    accuracy = vote_inference([str(p) for p in paths], data.x_test, data.y_test,
                              data.n_classes)
    print(json.dumps({"ensemble_accuracy": accuracy, "models": len(paths),
                      "elapsed_sec": time.perf_counter() - tic}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="refeval", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p):
        p.add_argument("--dataset", default="digits",
                       help="digits, blobs784, or a path to an .npz with x/y arrays")
        p.add_argument("--classes", default=None, help="comma list restricting the labels")
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--device", default="cpu")

    p = sub.add_parser("serve", help="speak the wire protocol on stdin/stdout")
    common(p)
    p.add_argument("--weights-dir", default=None, help="save trained weights here")
    p.add_argument("--augment", action="store_true",
                   help="random crops/flips during training (images only)")
    p.set_defaults(func=serve)

    p = sub.add_parser("vote", help="majority-vote inference over saved models")
    common(p)
    p.add_argument("--weights-dir", required=True)
    p.add_argument("--models", default=None, help="comma list of request ids to load")
    p.set_defaults(func=cmd_vote)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
