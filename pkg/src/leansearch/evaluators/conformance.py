"""Wire-protocol conformance checks, runnable against any evaluator command.

The checks drive a live child process through the handshake, a pair of
evaluations (asserting id echo and strictly-increasing ordering), and the
error path (a structurally broken config must produce an error record without
killing the process). Returns a list of violation strings; empty means the
evaluator conforms.
"""
from __future__ import annotations

import json
import queue
import subprocess
import threading

from ..configs import Config
from .external import PROTOCOL_VERSION, _config_payload


class _Session:
    def __init__(self, cmd: list[str]):
        self.proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                     stderr=subprocess.DEVNULL, text=True, bufsize=1)
        self.lines: queue.Queue = queue.Queue()
        threading.Thread(target=self._pump, daemon=True).start()

    def _pump(self):
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self.lines.put(line)
        self.lines.put(None)

    def send(self, record: dict):
        assert self.proc.stdin is not None
        self.proc.stdin.write(json.dumps(record) + "\n")
        self.proc.stdin.flush()

    def recv(self, timeout: float):
        try:
            line = self.lines.get(timeout=timeout)
        except queue.Empty:
            return None
        if line is None:
            return None
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            return {"__malformed__": line}

    def close(self):
        try:
            if self.proc.stdin is not None:
                self.proc.stdin.close()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


def run_conformance(cmd: list[str], sample_config: Config, epochs: int = 1,
                    timeout: float = 120.0) -> list[str]:
    """Run the protocol test suite against ``cmd``; returns violations."""
    violations: list[str] = []
    session = _Session(cmd)
    try:
        # Handshake
        session.send({"type": "hello", "version": PROTOCOL_VERSION})
        reply = session.recv(timeout)
        if reply is None:
            return ["no handshake reply"]
        if reply.get("type") != "hello":
            violations.append(f"handshake reply type {reply.get('type')!r} != 'hello'")
        if reply.get("version") != PROTOCOL_VERSION:
            violations.append(f"handshake version {reply.get('version')!r} != {PROTOCOL_VERSION}")
        if not isinstance(reply.get("capabilities"), list):
            violations.append("handshake reply lacks a capabilities list")

        # Two evaluations with increasing ids; each response must echo its id.
        payload = _config_payload(sample_config)
        for request_id in (1, 2):
            session.send({"type": "evaluate", "id": request_id, "config": payload,
                          "epochs": epochs, "seed": 0})
            record = session.recv(timeout)
            if record is None:
                violations.append(f"no response to evaluate id {request_id}")
                return violations
            if record.get("id") != request_id:
                violations.append(f"response id {record.get('id')} != request id {request_id}")
            if record.get("type") not in ("result", "error"):
                violations.append(f"unexpected response type {record.get('type')!r}")
            if record.get("type") == "result":
                for field_name in ("best_val_acc", "t_tr_sec", "n_params"):
                    if field_name not in record:
                        violations.append(f"result id {request_id} missing field {field_name!r}")

        # Error path: a broken config must yield an error record, not a crash.
        broken = dict(payload)
        if "channels" in broken:
            broken["channels"] = "not-a-channel-list"
        else:
            broken["hidden_nodes"] = "not-a-node-list"
        session.send({"type": "evaluate", "id": 3, "config": broken, "epochs": epochs, "seed": 0})
        record = session.recv(timeout)
        if record is None:
            violations.append("no response to broken-config evaluate")
            return violations
        if record.get("type") != "error":
            violations.append(f"broken config answered with {record.get('type')!r}, expected 'error'")
        if record.get("id") != 3:
            violations.append(f"error record id {record.get('id')} != 3")

        # The process must survive the error and keep serving.
        session.send({"type": "evaluate", "id": 4, "config": payload, "epochs": epochs, "seed": 0})
        record = session.recv(timeout)
        if record is None:
            violations.append("process did not survive the error path")
        elif record.get("id") != 4:
            violations.append(f"post-error response id {record.get('id')} != 4")
    finally:
        session.close()
    return violations
