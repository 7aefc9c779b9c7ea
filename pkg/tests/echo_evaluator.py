"""Wire-protocol test double.

Answers evaluate requests with values declared *by the request itself*:
``best_val_acc`` echoes the config's eta field, ``t_tr_sec`` is
batch_size / 1000, ``n_params`` is batch_size. No training happens, so the
engine's round-trip can be checked bit-exactly.

Flags select misbehaving variants for the client's failure-path tests:
  --bad-version     handshake replies with protocol version 99
  --garbage         responds with non-JSON noise
  --wrong-id        responds with id + 1000
  --die-on-evaluate exits silently instead of answering
  --mute            never responds to anything
  --mute-evaluate   answers the handshake but never answers evaluates
"""
import json
import sys


def main() -> int:
    flags = set(sys.argv[1:])
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if "--mute" in flags:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError:
            print(json.dumps({"type": "error", "id": -1, "reason": "bad json"}), flush=True)
            continue

        if record.get("type") == "hello":
            version = 99 if "--bad-version" in flags else 1
            print(json.dumps({"type": "hello", "version": version,
                              "capabilities": ["mlp", "cnn", "deterministic"]}), flush=True)
            continue

        if record.get("type") == "evaluate":
            if "--mute-evaluate" in flags:
                continue
            if "--die-on-evaluate" in flags:
                return 0
            if "--garbage" in flags:
                print("this is not json", flush=True)
                continue
            request_id = record.get("id", -1)
            if "--wrong-id" in flags:
                request_id = request_id + 1000
            config = record.get("config", {})
            try:
                eta = float(config["eta"])
                batch = int(config["batch_size"])
                if config["kind"] == "cnn":
                    [int(c) for c in config["channels"].split(",") if c]
                else:
                    [int(n) for n in config["hidden_nodes"].split(",") if n]
            except (KeyError, ValueError) as exc:
                print(json.dumps({"type": "error", "id": record.get("id", -1),
                                  "reason": f"bad config: {exc}"}), flush=True)
                continue
            print(json.dumps({
                "type": "result",
                "id": request_id,
                "best_val_acc": min(max(eta, 0.0), 1.0),
                "t_tr_sec": batch / 1000.0,
                "n_params": batch,
                "epochs_run": record.get("epochs", 0),
            }), flush=True)
            continue

        print(json.dumps({"type": "error", "id": record.get("id", -1),
                          "reason": f"unknown type {record.get('type')!r}"}), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
