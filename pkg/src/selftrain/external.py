"""Client for classifier backends that run as a child process.

Messages are single-line JSON objects on the child's stdin/stdout:

    {"op":"hello","version":1}                      -> {"ok":true,"classes":["positive","negative"]}
    {"op":"predict","texts":[...]}                  -> {"probs":[[p_pos,p_neg],...]}
    {"op":"train","examples":[{"text","label"}],"epochs":1} -> {"ok":true}
    {"op":"bye"}                                    -> child exits 0
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
import threading
from typing import Any, Sequence

from .backend import Prediction, ProbVector, TrainExample
from .corpus import Utterance
from .errors import BackendLostError, ConfigError, ProtocolError

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1


class ExternalBackend:
    def __init__(self, cmd: Sequence[str], predict_chunk: int = 256, shutdown_timeout: float = 5.0):
        if not cmd:
            raise ConfigError("external backend command is empty")
        if predict_chunk < 1:
            raise ConfigError("predict_chunk must be >= 1")
        self.cmd = list(cmd)
        self.predict_chunk = predict_chunk
        self.shutdown_timeout = shutdown_timeout
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()

    # -- lifecycle --------------------------------------------------------

    def start(self) -> "ExternalBackend":
        try:
            self._proc = subprocess.Popen(
                self.cmd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as exc:
            raise BackendLostError(f"cannot start backend {self.cmd!r}: {exc}") from None
        reply = self.call({"op": "hello", "version": PROTOCOL_VERSION})
        if reply.get("ok") is not True:
            raise ProtocolError("handshake rejected", json.dumps(reply))
        classes = reply.get("classes")
        if classes is not None and list(classes) != ["positive", "negative"]:
            raise ProtocolError(f"unexpected class list {classes!r}", json.dumps(reply))
        return self

    def close(self) -> None:
        proc, self._proc = self._proc, None
        if proc is None:
            return
        if proc.poll() is None:
            try:
                proc.stdin.write(json.dumps({"op": "bye"}) + "\n")
                proc.stdin.flush()
            except (BrokenPipeError, OSError):
                pass
            try:
                proc.wait(self.shutdown_timeout)
            except subprocess.TimeoutExpired:
                log.warning("backend did not exit after 'bye'; killing it")
                proc.kill()
                proc.wait()
        for stream in (proc.stdin, proc.stdout):
            try:
                stream.close()
            except (BrokenPipeError, OSError):
                pass

    def __enter__(self) -> "ExternalBackend":
        return self.start() if self._proc is None else self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- transport --------------------------------------------------------

    def call(self, msg: dict[str, Any], batch_index: int | None = None) -> dict[str, Any]:
        """Send one request line and read one response line."""
        with self._lock:
            proc = self._proc
            if proc is None:
                raise BackendLostError("backend is not running", batch_index)
            try:
                proc.stdin.write(json.dumps(msg, ensure_ascii=False) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise BackendLostError(f"backend pipe closed: {exc}", batch_index) from None
            if not line:
                try:
                    code = proc.wait(timeout=1.0)
                except subprocess.TimeoutExpired:
                    code = None
                raise BackendLostError(f"backend closed its output (exit status {code})", batch_index)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError("malformed response", line.rstrip("\n"), batch_index) from None
        if not isinstance(reply, dict):
            raise ProtocolError("response is not an object", line.rstrip("\n"), batch_index)
        if "error" in reply:
            raise ProtocolError(f"backend error: {reply['error']}", line.rstrip("\n"), batch_index)
        return reply

    # -- backend contract -------------------------------------------------

    def predict_texts(self, texts: Sequence[str], batch_index: int | None = None) -> list[ProbVector]:
        reply = self.call({"op": "predict", "texts": list(texts)}, batch_index)
        raw = json.dumps(reply)
        probs = reply.get("probs")
        if not isinstance(probs, list):
            raise ProtocolError("predict response lacks 'probs'", raw, batch_index)
        if len(probs) != len(texts):
            raise ProtocolError(f"expected {len(texts)} probability pairs, got {len(probs)}", raw, batch_index)
        out = []
        for pair in probs:
            if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(x, (int, float)) for x in pair)):
                raise ProtocolError(f"bad probability pair {pair!r}", raw, batch_index)
            if not all(math.isfinite(x) for x in pair):
                raise ProtocolError(f"non-finite probability pair {pair!r}", raw, batch_index)
            try:
                out.append(ProbVector(float(pair[0]), float(pair[1])))
            except ValueError as exc:
                raise ProtocolError(str(exc), raw, batch_index) from None
        return out

    def predict_batch(self, utterances: Sequence[Utterance]) -> list[Prediction]:
        preds: list[Prediction] = []
        for b, start in enumerate(range(0, len(utterances), self.predict_chunk)):
            chunk = utterances[start : start + self.predict_chunk]
            probs = self.predict_texts([u.text for u in chunk], batch_index=b)
            preds.extend(Prediction.from_probs(u.id, p) for u, p in zip(chunk, probs))
        return preds

    def train_one_epoch(self, examples: Sequence[TrainExample], epochs: int = 1) -> "ExternalBackend":
        if epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not examples:
            return self
        msg = {
            "op": "train",
            "examples": [{"text": ex.text, "label": ex.label.value} for ex in examples],
            "epochs": epochs,
        }
        reply = self.call(msg)
        if reply.get("ok") is not True:
            raise ProtocolError("train not acknowledged", json.dumps(reply))
        return self
