"""Command-line entry point: ``selftrain {run,estimate-ratio,evaluate,analyze,synth}``.

Exit codes: 0 success, 2 input/config error, 3 backend failure, 4 user abort.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence, TextIO

from .analysis import (
    N_BUCKETS,
    bucket_of,
    bucket_performance,
    gold_labels,
    prediction_distribution,
    tv_distance,
    write_bucket_csv,
    write_histogram_csv,
)
from .backend import BuiltinModel
from .corpus import TWO_CLASSES, Corpus, SentimentLabel, Utterance, load_corpus, prepare, serialize_jsonl
from .engine import (
    BACKEND_LOST,
    NUMERIC_ABORT,
    RunConfig,
    load_pseudo_labels,
    load_run_config,
    run_to_completion,
)
from .errors import BackendError, ConfigError, EstimationAborted, ParseError, SelfTrainError
from .external import ExternalBackend
from .metrics import algorithmic_curve, score, write_curve_csv
from .selection import estimate_ratio, gold_annotator
from .synthetic import SyntheticSpec, generate_synthetic

log = logging.getLogger("selftrain")

EXIT_OK, EXIT_INPUT, EXIT_BACKEND, EXIT_ABORT = 0, 2, 3, 4


class InputError(SelfTrainError):
    """Bad user input; maps to exit status 2."""


def _read_corpus(path: str) -> Corpus:
    try:
        return load_corpus(path)
    except OSError as exc:
        raise InputError(f"cannot read corpus {path}: {exc.strerror or exc}") from None
    except (ParseError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# run


def _effective_config(args: argparse.Namespace) -> RunConfig:
    config = load_run_config(args.config)
    overrides = {}
    env_seed = os.environ.get("SELFTRAIN_SEED")
    if env_seed:
        try:
            overrides["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"SELFTRAIN_SEED must be an integer, got {env_seed!r}") from None
    for flag, name in (("seed", "seed"), ("selection_percent", "selection_percent"),
                       ("max_iterations", "max_iterations"), ("epochs", "epochs_per_iteration")):
        value = getattr(args, flag)
        if value is not None:
            overrides[name] = value
    config = replace(config, **overrides)
    backend = replace(config.backend, config=replace(config.backend.config, seed=config.seed))
    if backend.pretrain_corpus and not Path(backend.pretrain_corpus).is_absolute():
        backend = replace(backend, pretrain_corpus=str(Path(args.config).parent / backend.pretrain_corpus))
    return replace(config, backend=backend)


def _make_backend(config: RunConfig):
    settings = config.backend
    if settings.kind == "external":
        return ExternalBackend(settings.cmd, settings.predict_chunk).start()
    model = BuiltinModel(settings.config)
    if settings.pretrain_corpus:
        source = prepare(_read_corpus(settings.pretrain_corpus))
        model.pretrain(source, settings.pretrain_epochs)
    else:
        log.warning("builtin backend has no pretrain_corpus: starting from zero weights")
    return model


def _write_history_csv(history, path: Path) -> None:
    rows = [r.to_dict() for r in history]
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})


def cmd_run(args: argparse.Namespace) -> int:
    config = _effective_config(args)
    corpus = prepare(_read_corpus(args.corpus))
    test_corpus = prepare(_read_corpus(args.test_corpus)) if args.test_corpus else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    backend = _make_backend(config)
    try:
        result = run_to_completion(backend, corpus, config, test_corpus, out / "pseudo_labels.jsonl")
    finally:
        if isinstance(backend, ExternalBackend):
            backend.close()

    exports = {"pseudo_labels": "pseudo_labels.jsonl", "metrics": "metrics.csv"}
    _write_history_csv(result.history, out / "metrics.csv")
    labeled = list(result.state.labeled.values())
    if labeled and all(corpus[p.utterance_id].gold in TWO_CLASSES for p in labeled):
        write_curve_csv(algorithmic_curve(labeled, corpus), out / "curve.csv")
        exports["curve"] = "curve.csv"
    report = result.report(exports)
    report["config"] = config.to_dict()
    report["corpus"] = {"name": corpus.name, "size": len(corpus)}
    _write_json(out / "report.json", report)
    print(f"stop reason: {result.stop_reason}; labeled {len(result.state.labeled)}/{len(corpus)}", file=sys.stderr)
    if result.stop_reason in (BACKEND_LOST, NUMERIC_ABORT):
        print(f"error: {result.error}", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


# ---------------------------------------------------------------------------
# estimate-ratio


def interactive_annotator(stdin: TextIO | None = None, stderr: TextIO | None = None):
    stdin = stdin or sys.stdin
    stderr = stderr or sys.stderr

    def annotate(u: Utterance, i: int, k: int) -> SentimentLabel:
        while True:
            print(f"[{i}/{k}] {u.text}", file=stderr)
            print("(p)ositive / (n)egative / (q)uit: ", end="", file=stderr, flush=True)
            answer = stdin.readline()
            if not answer:
                raise EstimationAborted("input closed")
            answer = answer.strip().lower()
            if answer == "p":
                return SentimentLabel.POSITIVE
            if answer == "n":
                return SentimentLabel.NEGATIVE
            if answer == "q":
                raise EstimationAborted("aborted by user")

    return annotate


def cmd_estimate_ratio(args: argparse.Namespace) -> int:
    corpus = prepare(_read_corpus(args.corpus))
    if args.k > len(corpus):
        raise InputError(f"k={args.k} exceeds corpus size {len(corpus)}")
    annotator = gold_annotator if args.oracle else interactive_annotator()
    try:
        est = estimate_ratio(corpus, args.k, annotator, args.seed)
    except EstimationAborted as exc:
        if args.oracle:
            raise InputError(str(exc)) from None
        print(f"estimation aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    _write_json(Path(args.out), est.to_dict())
    print(json.dumps(est.to_dict(), sort_keys=True))
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def cmd_evaluate(args: argparse.Namespace) -> int:
    corpus = _read_corpus(args.corpus)
    labels = load_pseudo_labels(args.labels)
    if not labels:
        raise InputError(f"{args.labels}: no pseudo-labels to evaluate")
    bad = [p.utterance_id for p in labels if p.utterance_id not in corpus or corpus[p.utterance_id].gold not in TWO_CLASSES]
    if bad:
        raise InputError(f"{len(bad)} labeled ids missing from corpus or lacking gold: {', '.join(bad[:10])}")
    rep = score([corpus[p.utterance_id].gold for p in labels], [p.label for p in labels])
    print(rep.format())
    if args.curve:
        write_curve_csv(algorithmic_curve(labels, corpus), args.curve)
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def cmd_analyze(args: argparse.Namespace) -> int:
    corpus = prepare(_read_corpus(args.corpus))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    undefined = sum(1 for u in corpus if bucket_of(u) is None)
    summary: dict = {
        "utterances": len(corpus),
        "undefined_ratio_count": undefined,
        "undefined_ratio_fraction": undefined / len(corpus) if len(corpus) else 0.0,
        "exports": {"buckets": "buckets.csv", "gold_histogram": "gold_histogram.csv"},
    }
    gold = gold_labels(corpus)
    gold_summary = prediction_distribution(corpus, gold)
    write_histogram_csv(gold_summary, out / "gold_histogram.csv")
    summary["gold_mean_bucket"] = {c.value: _finite(gold_summary.mean_bucket(c)) for c in TWO_CLASSES}

    if args.labels:
        pseudo = {p.utterance_id: p.label for p in load_pseudo_labels(args.labels)}
        unknown = [i for i in pseudo if i not in corpus]
        if unknown:
            raise InputError(f"{len(unknown)} labeled ids not in corpus: {', '.join(unknown[:10])}")
        perf = bucket_performance(corpus, pseudo)
        label_summary = prediction_distribution(corpus, pseudo)
        write_histogram_csv(label_summary, out / "label_histogram.csv")
        summary["exports"]["label_histogram"] = "label_histogram.csv"
        covered = {i: gold[i] for i in pseudo if i in gold}
        if covered and label_summary.total():
            summary["tv_distance"] = tv_distance(label_summary, prediction_distribution(corpus, covered))
        summary["undefined_ratio_weighted_f1"] = perf.undefined_f1
    else:
        perf = None
    _write_bucket_counts(corpus, perf, out / "buckets.csv")
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def _finite(x: float) -> float | None:
    return None if x != x else x


def _write_bucket_counts(corpus: Corpus, perf, path: Path) -> None:
    if perf is not None:
        write_bucket_csv(perf, path)
        return
    counts = [0] * N_BUCKETS
    for u in corpus:
        b = bucket_of(u)
        if b is not None:
            counts[b] += 1
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bucket_lo", "count", "weighted_f1", "acc_positive", "acc_negative"])
        for i, n in enumerate(counts):
            if n:
                w.writerow([f"{i / N_BUCKETS:.1f}", n, "", "", ""])


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SyntheticSpec.from_json(args.spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for corpus in generate_synthetic(spec):
        (out / f"{corpus.name}.jsonl").write_bytes(serialize_jsonl(corpus))
    print(f"wrote train/test/source corpora to {out}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="selftrain", description="Unsupervised self-training for code-switched sentiment.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the self-training loop")
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test-corpus")
    p.add_argument("--seed", type=int)
    p.add_argument("--selection-percent", type=float)
    p.add_argument("--max-iterations", type=int)
    p.add_argument("--epochs", type=int, help="fine-tuning epochs per iteration")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("estimate-ratio", help="annotate a sample to estimate the class ratio")
    p.add_argument("--corpus", required=True)
    p.add_argument("-k", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--oracle", action="store_true", help="answer from gold labels instead of prompting")
    p.add_argument("--out", default="ratio_estimate.json")
    p.set_defaults(func=cmd_estimate_ratio)

    p = sub.add_parser("evaluate", help="score pseudo-labels against a gold corpus")
    p.add_argument("--labels", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--curve", help="write the algorithmic-perspective curve CSV here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="token-ratio bucket analysis")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate synthetic train/test/source corpora")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_ABORT
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (InputError, ConfigError, ParseError, ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SelfTrainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
