"""Client side of the external-evaluator wire protocol.

Bit-exact framing: line-delimited UTF-8 JSON records over the child process's
standard input/output.

* Handshake: engine sends ``{"type":"hello","version":1}``; the evaluator
  replies ``{"type":"hello","version":1,"capabilities":[...]}``.
* Evaluate: ``{"type":"evaluate","id":<int>,"config":{...flat config
  encoding...},"epochs":<int>,"seed":<int>}`` answered by either
  ``{"type":"result","id":<int>,"best_val_acc":<float>,"t_tr_sec":<float>,
  "n_params":<int>}`` or ``{"type":"error","id":<int>,"reason":<string>}``.

One response per request, request ids strictly increasing, unknown fields
ignored on both sides. Results may carry an optional ``digest`` field echoing
the evaluator's structural digest of the network it actually built.
"""
from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass

from ..configs import Config, config_to_pairs
from ..objective import EvalResult
from .base import DatasetInfo, Evaluator, EvaluatorContract, EvaluatorError

PROTOCOL_VERSION = 1


class ProtocolError(EvaluatorError):
    """Handshake or framing violation; the process cannot be used."""


@dataclass(frozen=True)
class ExternalResult:
    result: EvalResult
    digest: str | None


def _config_payload(config: Config) -> dict[str, str]:
    return dict(config_to_pairs(config))


class ExternalEvaluator(Evaluator):
    """Runs an evaluator child process and speaks the wire protocol to it."""

    def __init__(
        self,
        cmd: list[str],
        dataset: DatasetInfo,
        epochs: int = 10,
        timeout_sec: float = 600.0,
        handshake_timeout_sec: float = 30.0,
    ):
        self._cmd = list(cmd)
        self._proc = subprocess.Popen(
            self._cmd,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 1
        self._transcript: list[str] = []

        capabilities = self._handshake(handshake_timeout_sec)
        self.contract = EvaluatorContract(
            id=f"external:{' '.join(self._cmd)}",
            dataset=dataset,
            epochs=epochs,
            supports_cnn="cnn" in capabilities,
            supports_mlp="mlp" in capabilities,
            supports_vote="vote" in capabilities,
            deterministic="deterministic" in capabilities,
            timeout_sec=timeout_sec,
        )

    def _pump(self):
        assert self._proc.stdout is not None
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF marker

    def _send(self, record: dict) -> None:
        if self._proc.poll() is not None:
            raise ProtocolError(f"evaluator process exited with code {self._proc.returncode}")
        assert self._proc.stdin is not None
        line = json.dumps(record, separators=(",", ":"))
        self._transcript.append(f">> {line}")
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()

    def _recv(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"no response within {timeout}s")
        if line is None:
            raise ProtocolError("evaluator closed its output stream")
        self._transcript.append(f"<< {line.rstrip()}")
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"malformed response line: {line!r}") from exc
        if not isinstance(record, dict) or "type" not in record:
            raise ProtocolError(f"response is not a typed record: {line!r}")
        return record

    def _handshake(self, timeout: float) -> list[str]:
        self._send({"type": "hello", "version": PROTOCOL_VERSION})
        reply = self._recv(timeout)
        if reply.get("type") != "hello":
            raise ProtocolError(f"expected hello reply, got {reply.get('type')!r}")
        if reply.get("version") != PROTOCOL_VERSION:
            raise ProtocolError(
                f"protocol version mismatch: engine {PROTOCOL_VERSION}, evaluator {reply.get('version')!r}"
            )
        caps = reply.get("capabilities", [])
        if not isinstance(caps, list):
            raise ProtocolError("capabilities must be a list")
        return [str(c) for c in caps]

    def _failure(self, reason: str) -> EvalResult:
        tail = "\n".join(self._transcript[-6:])
        return EvalResult(best_val_acc=0.0, t_tr_sec=1.0, n_params=0, epochs_run=0,
                          failed=True, reason=f"{reason}\n{tail}")

    def evaluate_detailed(self, config: Config, seed: int = 0, epochs: int | None = None,
                          split: str = "search") -> ExternalResult:
        self.check_capabilities(config)
        request_id = self._next_id
        self._next_id += 1
        request = {
            "type": "evaluate",
            "id": request_id,
            "config": _config_payload(config),
            "epochs": epochs if epochs is not None else self.contract.epochs,
            "seed": seed,
        }
        if split != "search":
            request["split"] = split
        try:
            self._send(request)
            record = self._recv(self.contract.timeout_sec)
        except TimeoutError:
            return ExternalResult(self._failure(f"timeout waiting for id {request_id}"), None)
        except ProtocolError as exc:
            return ExternalResult(self._failure(str(exc)), None)

        if record.get("id") != request_id:
            return ExternalResult(self._failure(f"response id {record.get('id')} != request id {request_id}"), None)
        if record.get("type") == "error":
            return ExternalResult(self._failure(f"evaluator error: {record.get('reason', '?')}"), None)
        if record.get("type") != "result":
            return ExternalResult(self._failure(f"unexpected record type {record.get('type')!r}"), None)
        try:
            result = EvalResult(
                best_val_acc=float(record["best_val_acc"]),
                t_tr_sec=float(record["t_tr_sec"]),
                n_params=int(record["n_params"]),
                epochs_run=int(record.get("epochs_run", request["epochs"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            return ExternalResult(self._failure(f"malformed result fields: {exc}"), None)
        digest = record.get("digest")
        return ExternalResult(result, str(digest) if digest is not None else None)

    def evaluate(self, config: Config, seed: int = 0, epochs: int | None = None,
                 split: str = "search") -> EvalResult:
        return self.evaluate_detailed(config, seed=seed, epochs=epochs, split=split).result

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                if self._proc.stdin is not None:
                    self._proc.stdin.close()
                self._proc.wait(timeout=5)
            except Exception:
                self._proc.kill()
