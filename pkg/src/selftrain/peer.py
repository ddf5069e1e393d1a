"""Serve the built-in model over the external-backend line protocol.

Useful as a reference peer and for checking that the external client
reproduces in-process runs::

    python -m selftrain.peer --pretrain source.jsonl --seed 42
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import TextIO

from .backend import BackendConfig, BuiltinModel, TrainExample
from .corpus import SentimentLabel, load_corpus, prepare
from .errors import SelfTrainError


def handle(model: BuiltinModel, msg: dict) -> dict | None:
    op = msg.get("op")
    if op == "hello":
        return {"ok": True, "classes": ["positive", "negative"]}
    if op == "predict":
        probs = model.positive_probs([tuple(t.split()) for t in msg["texts"]])
        return {"probs": [[float(p), 1.0 - float(p)] for p in probs]}
    if op == "train":
        examples = [
            TrainExample(f"ex{i}", ex["text"], SentimentLabel.parse(ex["label"]))
            for i, ex in enumerate(msg["examples"])
        ]
        model.train_one_epoch(examples, int(msg.get("epochs", 1)))
        return {"ok": True}
    if op == "bye":
        return None
    return {"error": f"unknown op {op!r}"}


def serve(model: BuiltinModel, stdin: TextIO = sys.stdin, stdout: TextIO = sys.stdout) -> int:
    for line in stdin:
        if not line.strip():
            continue
        try:
            reply = handle(model, json.loads(line))
        except (SelfTrainError, ValueError, KeyError, TypeError) as exc:
            reply = {"error": str(exc)}
        if reply is None:
            return 0
        stdout.write(json.dumps(reply) + "\n")
        stdout.flush()
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pretrain", help="gold-labeled corpus to pre-train on")
    ap.add_argument("--pretrain-epochs", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--learning-rate", type=float, default=0.1)
    ap.add_argument("--hash-dim", type=int, default=2**18)
    ap.add_argument("--ngram-max", type=int, default=2)
    args = ap.parse_args(argv)
    config = BackendConfig(
        learning_rate=args.learning_rate, hash_dim=args.hash_dim, ngram_max=args.ngram_max, seed=args.seed
    )
    model = BuiltinModel(config)
    if args.pretrain:
        model.pretrain(prepare(load_corpus(args.pretrain)), args.pretrain_epochs)
    return serve(model)


if __name__ == "__main__":
    sys.exit(main())
