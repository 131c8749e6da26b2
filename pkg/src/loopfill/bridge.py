"""Classifier living in another process, spoken to over newline-delimited JSON.

Requests and replies (one JSON object per line, UTF-8)::

    {"op":"hello"}                                -> {"dim":n,"num_labels":K,"grad":bool}
    {"id":N,"op":"classify","points":[[...],...]} -> {"id":N,"labels":[...]}
    {"id":N,"op":"grad","point":[...],"label":k}  -> {"id":N,"grad":[...]}
    {"id":N,"op":"logits","point":[...]}          -> {"id":N,"logits":[...]}

``logits`` is only offered by peers that advertise ``grad``; the repair step
needs both. A peer may answer any request with ``{"id":N,"error":"..."}``.
"""

from __future__ import annotations

import json
import queue
import shlex
import socket
import subprocess
import threading
from typing import Any

import numpy as np

from .classifiers import DifferentiableClassifier


class BridgeError(RuntimeError):
    pass


class TransportError(BridgeError):
    pass


class ProtocolError(BridgeError):
    pass


class CapabilityError(BridgeError):
    pass


def encode_message(msg: dict) -> bytes:
    return (json.dumps(msg, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def decode_message(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"malformed reply: {exc}") from None
    if not isinstance(msg, dict):
        raise ProtocolError("reply is not a JSON object")
    return msg


_EOF = object()


class LineChannel:
    """A byte stream split into lines by a background reader."""

    def __init__(self, rfile, wfile, on_close=None, on_shutdown=None):
        self._rfile = rfile
        self._wfile = wfile
        self._on_close = on_close
        self._on_shutdown = on_shutdown
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def _read_loop(self) -> None:
        try:
            for line in iter(self._rfile.readline, b""):
                self._lines.put(line)
        except (OSError, ValueError):
            pass
        finally:
            self._lines.put(_EOF)

    def send(self, data: bytes) -> None:
        try:
            self._wfile.write(data)
            self._wfile.flush()
        except (OSError, ValueError) as exc:
            raise TransportError(f"peer is gone: {exc}") from None

    def recv(self, timeout: float) -> bytes:
        try:
            line = self._lines.get(timeout=timeout)
        except queue.Empty:
            raise TransportError(f"no reply within {timeout:.3f}s") from None
        if line is _EOF:
            self._lines.put(_EOF)
            raise TransportError("peer closed the connection")
        return line

    def close(self) -> None:
        # unblock the reader first: closing a buffered file it is reading from would wait on its lock
        if self._on_shutdown:
            self._on_shutdown()
        for f in (self._wfile, self._rfile):
            try:
                f.close()
            except OSError:
                pass
        if self._on_close:
            self._on_close()


class BridgeClassifier(DifferentiableClassifier):
    def __init__(self, channel: LineChannel, timeout_ms: float = 30000.0):
        self._channel = channel
        self.timeout = timeout_ms / 1000.0
        self._lock = threading.Lock()
        self._next_id = 1
        self._channel.send(encode_message({"op": "hello"}))
        hello = decode_message(self._channel.recv(self.timeout))
        try:
            self.dim = int(hello["dim"])
            self.num_labels = int(hello["num_labels"])
            self.supports_gradients = bool(hello.get("grad", False))
        except (KeyError, TypeError, ValueError):
            raise ProtocolError(f"bad hello reply: {hello}") from None

    @classmethod
    def spawn(cls, cmd: str | list[str], timeout_ms: float = 30000.0) -> "BridgeClassifier":
        argv = shlex.split(cmd) if isinstance(cmd, str) else list(cmd)
        try:
            proc = subprocess.Popen(argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        except OSError as exc:
            raise TransportError(f"cannot start {argv[0]!r}: {exc}") from None

        def reap():
            try:
                proc.wait(timeout=1.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()

        client = cls(LineChannel(proc.stdout, proc.stdin, reap), timeout_ms)
        client.process = proc
        return client

    @classmethod
    def connect(cls, host: str, port: int, timeout_ms: float = 30000.0) -> "BridgeClassifier":
        try:
            sock = socket.create_connection((host, int(port)), timeout=timeout_ms / 1000.0)
        except OSError as exc:
            raise TransportError(f"cannot connect to {host}:{port}: {exc}") from None
        sock.settimeout(None)
        rfile = sock.makefile("rb")
        wfile = sock.makefile("wb")

        def shutdown():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass

        return cls(LineChannel(rfile, wfile, sock.close, shutdown), timeout_ms)

    def close(self) -> None:
        self._channel.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _request(self, op: str, **payload: Any) -> dict:
        with self._lock:
            rid = self._next_id
            self._next_id += 1
            self._channel.send(encode_message({"id": rid, "op": op, **payload}))
            while True:
                reply = decode_message(self._channel.recv(self.timeout))
                got = reply.get("id")
                if not isinstance(got, int):
                    raise ProtocolError(f"reply without integer id: {reply}")
                if got < rid:
                    continue  # late answer to a request that already timed out
                if got != rid:
                    raise ProtocolError(f"reply id {got} does not match request {rid}")
                if "error" in reply:
                    raise ProtocolError(f"peer error: {reply['error']}")
                return reply

    def classify_batch(self, xs) -> np.ndarray:
        xs = self._check_batch(xs)
        if len(xs) == 0:
            return np.zeros(0, dtype=np.int64)
        reply = self._request("classify", points=xs.tolist())
        labels = reply.get("labels")
        if not isinstance(labels, list) or len(labels) != len(xs):
            raise ProtocolError("label vector missing or of the wrong length")
        if not all(isinstance(l, int) and not isinstance(l, bool) and 0 <= l < self.num_labels for l in labels):
            raise ProtocolError("label out of range")
        return np.asarray(labels, dtype=np.int64)

    def _need_gradients(self) -> None:
        if not self.supports_gradients:
            raise CapabilityError("peer does not provide gradients")

    def _vector(self, reply: dict, key: str, n: int) -> np.ndarray:
        vec = reply.get(key)
        if not isinstance(vec, list) or len(vec) != n:
            raise ProtocolError(f"{key} reply missing or of the wrong length")
        try:
            out = np.asarray(vec, dtype=np.float64)
        except (TypeError, ValueError):
            raise ProtocolError(f"{key} reply is not numeric") from None
        if out.ndim != 1:
            raise ProtocolError(f"{key} reply is not a flat vector")
        return out

    def logit_gradient(self, x, k: int) -> np.ndarray:
        self._need_gradients()
        x = self._check_point(x)
        reply = self._request("grad", point=x.tolist(), label=self._check_label(k))
        return self._vector(reply, "grad", self.dim)

    def logits(self, x) -> np.ndarray:
        self._need_gradients()
        x = self._check_point(x)
        return self._vector(self._request("logits", point=x.tolist()), "logits", self.num_labels)

    def logits_batch(self, xs) -> np.ndarray:
        return np.array([self.logits(x) for x in self._check_batch(xs)])


def parse_bridge_target(text: str) -> dict:
    """``bridge:cmd=...`` or ``bridge:tcp=host:port`` -> classifier spec dict."""
    body = text[len("bridge:"):] if text.startswith("bridge:") else text
    if body.startswith("cmd="):
        return {"type": "bridge", "cmd": body[4:].strip().strip('"')}
    if body.startswith("tcp="):
        host, _, port = body[4:].rpartition(":")
        if not host or not port.isdigit():
            raise ValueError(f"bad tcp address {body[4:]!r}")
        return {"type": "bridge", "tcp": f"{host}:{port}"}
    raise ValueError(f"bridge target must be cmd=... or tcp=host:port, got {text!r}")


def open_bridge(spec: dict) -> BridgeClassifier:
    timeout = float(spec.get("timeout_ms", 30000.0))
    if "cmd" in spec:
        return BridgeClassifier.spawn(spec["cmd"], timeout)
    if "tcp" in spec:
        host, _, port = spec["tcp"].rpartition(":")
        return BridgeClassifier.connect(host, int(port), timeout)
    raise ValueError("bridge spec needs 'cmd' or 'tcp'")
