"""The self-training loop: zero-shot init, then fine-tune / predict / select until a stop."""

from __future__ import annotations

import json
import logging
import os
import tempfile
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

from .backend import BackendConfig, ClassifierBackend, TrainExample
from .corpus import TWO_CLASSES, Corpus, SentimentLabel
from .errors import BackendError, ConfigError, EmptyDatasetError, NumericError
from .metrics import score
from .selection import (
    RatioEstimate,
    Scheduled,
    SelectionOutcome,
    SelectionStrategy,
    Vanilla,
    apply_strategy,
    round_half_up,
    should_stop,
    strategy_from_dict,
    strategy_to_dict,
    truncate_to_quota,
)

log = logging.getLogger(__name__)

POS, NEG = SentimentLabel.POSITIVE, SentimentLabel.NEGATIVE

EXHAUSTED = "exhausted"
MAX_ITERATIONS = "max-iterations"
NUMERIC_ABORT = "numeric-abort"
BACKEND_LOST = "backend-lost"


@dataclass(frozen=True)
class PseudoLabel:
    utterance_id: str
    label: SentimentLabel
    confidence: float
    iteration: int


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "builtin"
    cmd: tuple[str, ...] = ()
    config: BackendConfig = field(default_factory=BackendConfig)
    pretrain_corpus: str | None = None
    pretrain_epochs: int = 5
    predict_chunk: int = 256

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BackendSettings":
        d = dict(d)
        kind = d.pop("kind", "builtin")
        if kind not in ("builtin", "external"):
            raise ConfigError(f"unknown backend kind {kind!r}")
        cmd = tuple(d.pop("cmd", ()) or ())
        if kind == "external" and not cmd:
            raise ConfigError("external backend needs a 'cmd'")
        own = {k: d.pop(k) for k in ("pretrain_corpus", "pretrain_epochs", "predict_chunk") if k in d}
        model_fields = {f.name for f in fields(BackendConfig)}
        unknown = set(d) - model_fields
        if unknown:
            raise ConfigError(f"unknown backend settings: {sorted(unknown)}")
        return cls(kind, cmd, BackendConfig(**d), **own)


@dataclass(frozen=True)
class RunConfig:
    strategy: SelectionStrategy = field(default_factory=Vanilla)
    selection_percent: float = 0.05
    epochs_per_iteration: int = 1
    max_iterations: int | None = None
    ratio_estimate: RatioEstimate | None = None
    seed: int = 42
    backend: BackendSettings = field(default_factory=BackendSettings)
    # retrain on the whole labeled pool every iteration instead of the newest batch only
    cumulative_retrain: bool = False

    def __post_init__(self):
        if not 0.0 < self.selection_percent <= 1.0:
            raise ConfigError("selection_percent must be in (0, 1]")
        if self.epochs_per_iteration < 1:
            raise ConfigError("epochs_per_iteration must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0 or null")

    def n_total(self, dataset_size: int) -> int:
        """Selections per iteration: round(percent * size), at least 2."""
        return max(2, round_half_up(self.selection_percent * dataset_size))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown run config fields: {sorted(unknown)}")
        if "strategy" in d:
            d["strategy"] = strategy_from_dict(d["strategy"])
        if "backend" in d:
            d["backend"] = BackendSettings.from_dict(d["backend"] or {})
        if d.get("ratio_estimate") is not None:
            d["ratio_estimate"] = RatioEstimate.from_dict(d["ratio_estimate"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        b = self.backend
        backend = {"kind": b.kind, "cmd": list(b.cmd), "pretrain_corpus": b.pretrain_corpus,
                   "pretrain_epochs": b.pretrain_epochs, "predict_chunk": b.predict_chunk}
        backend.update({f.name: getattr(b.config, f.name) for f in fields(BackendConfig)})
        return {
            "strategy": strategy_to_dict(self.strategy),
            "selection_percent": self.selection_percent,
            "epochs_per_iteration": self.epochs_per_iteration,
            "max_iterations": self.max_iterations,
            "ratio_estimate": self.ratio_estimate.to_dict() if self.ratio_estimate else None,
            "seed": self.seed,
            "backend": backend,
            "cumulative_retrain": self.cumulative_retrain,
        }


def load_run_config(path: str | Path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read run config {path}: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError("run config must be a JSON object")
    return RunConfig.from_dict(d)


@dataclass
class IterationRecord:
    iteration: int
    trained: int
    requested_positive: int = 0
    requested_negative: int = 0
    selected_positive: int = 0
    selected_negative: int = 0
    shortfall_positive: int = 0
    shortfall_negative: int = 0
    cumulative_positive: int = 0
    cumulative_negative: int = 0
    unlabeled_remaining: int = 0
    test_weighted_f1: float | None = None
    test_accuracy: float | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RunState:
    iteration: int
    labeled: dict[str, PseudoLabel]
    unlabeled_ids: list[str]
    cumulative: dict[SentimentLabel, int]
    history: list[IterationRecord] = field(default_factory=list)
    pending: list[str] = field(default_factory=list)  # newest selection, not yet trained on
    train_batches: list[tuple[str, ...]] = field(default_factory=list)
    stop_reason: str | None = None

    @classmethod
    def fresh(cls, corpus: Corpus) -> "RunState":
        return cls(0, {}, corpus.ids, {POS: 0, NEG: 0})

    @property
    def stopped(self) -> bool:
        return self.stop_reason is not None

    def check(self, corpus: Corpus) -> None:
        """Assert the pool invariants (conservation, disjointness, tallies)."""
        labeled, unlabeled = set(self.labeled), set(self.unlabeled_ids)
        assert not labeled & unlabeled, "labeled and unlabeled pools overlap"
        assert labeled | unlabeled == set(corpus.ids), "pools do not cover the corpus"
        assert len(self.labeled) + len(self.unlabeled_ids) == len(corpus)
        for c in TWO_CLASSES:
            assert self.cumulative[c] == sum(1 for p in self.labeled.values() if p.label is c)


@dataclass
class RunResult:
    state: RunState
    stop_reason: str
    export_path: Path | None = None
    error: str | None = None

    @property
    def history(self) -> list[IterationRecord]:
        return self.state.history

    def report(self, exports: Mapping[str, str] | None = None) -> dict:
        s = self.state
        return {
            "stop_reason": self.stop_reason,
            "error": self.error,
            "iterations": s.iteration,
            "labeled": len(s.labeled),
            "unlabeled": len(s.unlabeled_ids),
            "cumulative_positive": s.cumulative[POS],
            "cumulative_negative": s.cumulative[NEG],
            "history": [r.to_dict() for r in s.history],
            "exports": dict(exports or {}),
        }


# ---------------------------------------------------------------------------


def _evaluate(backend: ClassifierBackend, test_corpus: Corpus | None, record: IterationRecord) -> None:
    if test_corpus is None:
        return
    scored = [u for u in test_corpus if u.gold in TWO_CLASSES]
    if not scored:
        return
    preds = backend.predict_batch(scored)
    rep = score([u.gold for u in scored], [p.predicted for p in preds])
    record.test_weighted_f1 = rep.weighted_f1
    record.test_accuracy = rep.accuracy


def _select(
    state: RunState,
    backend: ClassifierBackend,
    corpus: Corpus,
    config: RunConfig,
    record: IterationRecord,
) -> SelectionOutcome:
    """Predict on the unlabeled pool, select, and move the selection into ``labeled``."""
    unlabeled = [corpus[i] for i in state.unlabeled_ids]
    preds = backend.predict_batch(unlabeled)
    outcome = apply_strategy(config.strategy, preds, corpus, state.iteration, config.n_total(len(corpus)))
    if config.ratio_estimate is not None:
        outcome = truncate_to_quota(outcome, state.cumulative, config.ratio_estimate)

    new_ids = []
    for sel in outcome.selected:
        state.labeled[sel.utterance_id] = PseudoLabel(sel.utterance_id, sel.label, sel.confidence, state.iteration)
        state.cumulative[sel.label] += 1
        new_ids.append(sel.utterance_id)
    chosen = set(new_ids)
    state.unlabeled_ids = [i for i in state.unlabeled_ids if i not in chosen]
    state.pending = new_ids

    record.requested_positive = outcome.requested_positive
    record.requested_negative = outcome.requested_negative
    record.selected_positive = len(outcome.of_class(POS))
    record.selected_negative = len(outcome.of_class(NEG))
    record.shortfall_positive = outcome.shortfall_positive
    record.shortfall_negative = outcome.shortfall_negative
    record.cumulative_positive = state.cumulative[POS]
    record.cumulative_negative = state.cumulative[NEG]
    record.unlabeled_remaining = len(state.unlabeled_ids)
    return outcome


def zero_shot_init(
    backend: ClassifierBackend,
    corpus: Corpus,
    config: RunConfig,
    test_corpus: Corpus | None = None,
    state: RunState | None = None,
) -> RunState:
    """Predict with the untouched model and make the iteration-0 selection (no training yet)."""
    if len(corpus) == 0:
        raise EmptyDatasetError(f"corpus {corpus.name!r} is empty")
    state = state or RunState.fresh(corpus)
    record = IterationRecord(0, trained=0)
    _evaluate(backend, test_corpus, record)
    _select(state, backend, corpus, config, record)
    state.history.append(record)
    return state


def _train_pending(state: RunState, backend: ClassifierBackend, corpus: Corpus, config: RunConfig) -> int:
    ids = list(state.labeled) if config.cumulative_retrain else state.pending
    examples = [TrainExample.from_utterance(corpus[i], state.labeled[i].label) for i in ids]
    if examples:
        backend.train_one_epoch(examples, config.epochs_per_iteration)
        state.train_batches.append(tuple(ids))
    state.pending = []
    return len(examples)


def iterate_once(
    state: RunState,
    backend: ClassifierBackend,
    corpus: Corpus,
    config: RunConfig,
    test_corpus: Corpus | None = None,
) -> RunState:
    """Fine-tune on the newest selection, then predict and select on what is left.

    When the stop rule fires after fine-tuning (pool exhausted or a class
    quota reached), no new selection is made and ``state.stop_reason`` is set.
    """
    if state.stopped:
        return state
    trained = _train_pending(state, backend, corpus, config)
    state.iteration += 1
    record = IterationRecord(state.iteration, trained=trained)
    _evaluate(backend, test_corpus, record)

    decision = should_stop(state.cumulative[POS], state.cumulative[NEG], config.ratio_estimate, len(state.unlabeled_ids))
    if decision.stop:
        record.cumulative_positive = state.cumulative[POS]
        record.cumulative_negative = state.cumulative[NEG]
        record.unlabeled_remaining = len(state.unlabeled_ids)
        state.history.append(record)
        state.stop_reason = decision.reason
        return state

    outcome = _select(state, backend, corpus, config, record)
    state.history.append(record)
    if not outcome.selected:
        resting = (
            isinstance(config.strategy, Scheduled)
            and outcome.requested_total == 0
            and config.strategy.has_future_selection(state.iteration)
        )
        if not resting:
            # nothing selectable although the pool is not empty
            state.stop_reason = EXHAUSTED
    return state


def run_to_completion(
    backend: ClassifierBackend,
    corpus: Corpus,
    config: RunConfig,
    test_corpus: Corpus | None = None,
    export_path: str | Path | None = None,
) -> RunResult:
    if config.epochs_per_iteration > 1:
        warnings.warn(
            f"epochs_per_iteration={config.epochs_per_iteration}: fine-tuning each selection for more than "
            "one epoch tends to overfit the small pseudo-labeled batches",
            stacklevel=2,
        )
    if len(corpus) == 0:
        raise EmptyDatasetError(f"corpus {corpus.name!r} is empty")
    state = RunState.fresh(corpus)
    error = None
    try:
        zero_shot_init(backend, corpus, config, test_corpus, state)
        while not state.stopped:
            if config.max_iterations is not None and state.iteration >= config.max_iterations:
                state.stop_reason = MAX_ITERATIONS
                break
            iterate_once(state, backend, corpus, config, test_corpus)
            log.info(
                "iteration %d: labeled %d, unlabeled %d",
                state.iteration, len(state.labeled), len(state.unlabeled_ids),
            )
    except NumericError as exc:
        state.stop_reason, error = NUMERIC_ABORT, str(exc)
    except BackendError as exc:
        state.stop_reason, error = BACKEND_LOST, str(exc)
    if state.stop_reason in (NUMERIC_ABORT, BACKEND_LOST):
        log.error("run aborted (%s): %s", state.stop_reason, error)

    result = RunResult(state, state.stop_reason, error=error)
    if export_path is not None:
        result.export_path = export_pseudo_labels(state, export_path)
    return result


def export_pseudo_labels(state: RunState, path: str | Path) -> Path:
    """Write labeled items as JSONL sorted by (iteration, id); replaces ``path`` atomically."""
    path = Path(path)
    items = sorted(state.labeled.values(), key=lambda p: (p.iteration, p.utterance_id))
    lines = "".join(
        json.dumps({"id": p.utterance_id, "label": p.label.value, "confidence": p.confidence, "iteration": p.iteration})
        + "\n"
        for p in items
    )
    try:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(lines)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write pseudo-labels to {path}: {exc.strerror or exc}") from exc
    return path


def load_pseudo_labels(path: str | Path) -> list[PseudoLabel]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                r = json.loads(line)
                out.append(PseudoLabel(
                    r["id"],
                    SentimentLabel.parse(r["label"]),
                    float(r.get("confidence", 1.0)),
                    int(r.get("iteration", 0)),
                ))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad pseudo-label record: {exc}") from None
    return out
