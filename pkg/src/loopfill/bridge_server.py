"""Reference peer for the bridge protocol: serves an in-process classifier.

    python -m loopfill.bridge_server --classifier '{"type":"ball","dim":2}'
    python -m loopfill.bridge_server --classifier '...' --tcp 127.0.0.1:7000
"""

from __future__ import annotations

import argparse
import json
import os
import socket
import sys

import numpy as np

from .bridge import encode_message
from .classifiers import DifferentiableClassifier, make_suite_classifier


def handle(clf, msg: dict) -> dict:
    op = msg.get("op")
    if op == "hello":
        return {"dim": clf.dim, "num_labels": clf.num_labels, "grad": isinstance(clf, DifferentiableClassifier)}
    rid = msg.get("id")
    try:
        if op == "classify":
            pts = np.asarray(msg["points"], dtype=np.float64).reshape(-1, clf.dim)
            return {"id": rid, "labels": [int(l) for l in clf.classify_batch(pts)]}
        if op == "grad":
            return {"id": rid, "grad": clf.logit_gradient(np.asarray(msg["point"]), int(msg["label"])).tolist()}
        if op == "logits":
            return {"id": rid, "logits": clf.logits(np.asarray(msg["point"])).tolist()}
        return {"id": rid, "error": f"unknown op {op!r}"}
    except (KeyError, TypeError, ValueError) as exc:
        return {"id": rid, "error": str(exc)}


def serve(clf, rfile, wfile) -> None:
    for raw in iter(rfile.readline, b""):
        raw = raw.strip()
        if not raw:
            continue
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as exc:
            reply = {"id": None, "error": f"bad json: {exc}"}
        else:
            reply = handle(clf, msg)
        wfile.write(encode_message(reply))
        wfile.flush()


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--classifier", required=True, help="classifier spec as a JSON object")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tcp", help="listen on host:port instead of stdin/stdout")
    ap.add_argument("--pidfile", help="write the server pid here once ready")
    args = ap.parse_args(argv)
    clf = make_suite_classifier(json.loads(args.classifier), args.seed)
    if args.pidfile:
        with open(args.pidfile, "w") as fh:
            fh.write(f"{os.getpid()}\n")
    if not args.tcp:
        serve(clf, sys.stdin.buffer, sys.stdout.buffer)
        return 0
    host, _, port = args.tcp.rpartition(":")
    with socket.create_server((host, int(port))) as srv:
        while True:
            conn, _ = srv.accept()
            with conn, conn.makefile("rb") as r, conn.makefile("wb") as w:
                try:
                    serve(clf, r, w)
                except (BrokenPipeError, ConnectionResetError):
                    pass


if __name__ == "__main__":
    raise SystemExit(main())
