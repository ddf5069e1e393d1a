"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``CRITERION n: PASS|FAIL`` line (visible even with
output capture on) and then asserts the criterion.
"""

import json
import statistics
import sys
import time

import numpy as np
import pytest

from selftrain import cli
from selftrain.analysis import bucket_performance, gold_labels, prediction_distribution, tv_distance
from selftrain.backend import BackendConfig, BuiltinModel, TrainExample
from selftrain.corpus import Corpus, serialize_jsonl
from selftrain.engine import RunConfig, iterate_once, run_to_completion, zero_shot_init
from selftrain.external import ExternalBackend
from selftrain.metrics import algorithmic_curve, score
from selftrain.selection import (
    Ratio,
    RatioEstimate,
    Scheduled,
    TokenRatioFiltered,
    Vanilla,
    apply_strategy,
    estimate_ratio,
    gold_annotator,
)
from selftrain.synthetic import SyntheticSpec, generate_synthetic

from conftest import P, N, ScriptedBackend, make_corpus, peer_cmd, pred, utt
from oracles import brute_force_scores, brute_force_select

SEEDS = range(10)
HASH_DIM = 2**16
PRETRAIN_EPOCHS = 3


@pytest.fixture
def verdict(capsys):
    def emit(n: int, ok: bool, detail: str) -> None:
        with capsys.disabled():
            print(f"\nCRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}")
        assert ok, detail

    return emit


def pretrained(seed: int, source: Corpus) -> BuiltinModel:
    return BuiltinModel(BackendConfig(seed=seed, hash_dim=HASH_DIM)).pretrain(source, PRETRAIN_EPOCHS)


def predicted(model, corpus: Corpus) -> dict:
    return {p.utterance_id: p.predicted for p in model.predict_batch(list(corpus))}


def test_c1_self_training_gain(verdict):
    start = time.perf_counter()
    gains = []
    for seed in SEEDS:
        train, test, source = generate_synthetic(SyntheticSpec(size=2000, seed=seed))
        result = run_to_completion(pretrained(seed, source), train, RunConfig(seed=seed), test)
        gains.append(result.history[-1].test_weighted_f1 - result.history[0].test_weighted_f1)
    elapsed = time.perf_counter() - start
    wins = sum(g > 0 for g in gains)
    median = statistics.median(gains)
    ok = wins >= 8 and median >= 0.05 and elapsed < 60
    verdict(1, ok, f"wins {wins}/10, median gain {median:.3f}, {elapsed:.1f}s")


def test_c2_ratio_beats_vanilla_under_imbalance(verdict):
    wins, pairs = 0, []
    for seed in SEEDS:
        train, _, source = generate_synthetic(SyntheticSpec(size=2000, class_prior_positive=0.8, seed=seed))
        f1 = {}
        for name, strategy in (("vanilla", Vanilla()), ("ratio", Ratio(0.8))):
            result = run_to_completion(pretrained(seed, source), train, RunConfig(strategy=strategy, seed=seed))
            f1[name] = algorithmic_curve(result.state.labeled.values(), train)[-1].weighted_f1
        wins += f1["ratio"] >= f1["vanilla"]
        pairs.append(f"{f1['ratio']:.3f}/{f1['vanilla']:.3f}")
    verdict(2, wins >= 7, f"ratio >= vanilla in {wins}/10 seeds (ratio/vanilla: {' '.join(pairs)})")


def test_c3_ratio_estimator_dispersion(verdict):
    corpus = make_corpus(1000, gold=lambda i: P if i < 800 else N)
    p_hat = np.array([estimate_ratio(corpus, 50, gold_annotator, seed).p_positive_hat for seed in range(1000)])
    std, mean = float(p_hat.std(ddof=1)), float(p_hat.mean())
    ok = 0.04 <= std <= 0.07 and abs(mean - 0.8) <= 0.01
    verdict(3, ok, f"std {std:.4f}, mean {mean:.4f}")


def test_c4_metric_oracle(verdict):
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 80))
        gold = [P if x else N for x in rng.random(n) < rng.random()]
        pred_ = [P if x else N for x in rng.random(n) < rng.random()]
        rep = score(gold, pred_)
        _, weighted, acc = brute_force_scores(gold, pred_)
        worst = max(worst, abs(rep.weighted_f1 - weighted), abs(rep.accuracy - acc))
    fixture = score([P, P, N], [P, N, N]).weighted_f1
    ok = worst <= 1e-9 and abs(fixture - 0.666667) <= 1e-6
    verdict(4, ok, f"max deviation {worst:.2e}, worked fixture {fixture:.6f}")


def _expected_counts(strategy, iteration, n_total):
    """Per-class request counts worked out from the strategy definitions."""
    if isinstance(strategy, Scheduled):
        n_total = strategy.per_iteration[min(iteration, len(strategy.per_iteration) - 1)]
        if n_total == 0:
            return 0, 0
        strategy = strategy.inner
    if isinstance(strategy, Ratio):
        n_pos = int(np.floor(strategy.positive_fraction * n_total + 0.5))
        return n_pos, n_total - n_pos
    return n_total // 2, n_total // 2


def _l2_share(u):
    l1 = sum(1 for _, t in u.tokens if t.value == "L1")
    l2 = sum(1 for _, t in u.tokens if t.value == "L2")
    return None if l1 + l2 == 0 else l2 / (l1 + l2)


def test_c5_selection_matches_oracle(verdict):
    rng = np.random.default_rng(5)
    mismatches = checked = 0
    for trial in range(200):
        n = int(rng.integers(0, 40))
        ids = [f"x{int(i):03d}" for i in rng.permutation(n)]
        # coarse probabilities force plenty of confidence ties
        preds = [pred(i, float(rng.choice([0.5, 0.6, 0.7, 0.9, 0.1, 0.3, rng.random()]))) for i in ids]
        corpus = Corpus(tuple(utt(i, "a b c", "".join(rng.choice(list("12o"), 3))) for i in ids))
        n_total = int(rng.integers(2, 30))
        strategies = [Vanilla(), Ratio(float(rng.uniform(0.01, 0.99))), Scheduled((0, n_total), Vanilla()),
                      TokenRatioFiltered(float(rng.random()), Ratio(float(rng.uniform(0.01, 0.99))))]
        for strategy in strategies:
            iteration = int(rng.integers(0, 3))
            pool = preds
            inner = strategy
            if isinstance(strategy, TokenRatioFiltered):
                inner = strategy.inner
                shares = {u.id: _l2_share(u) for u in corpus}
                pool = [p for p in preds if shares[p.utterance_id] is not None and shares[p.utterance_id] >= strategy.min_l2_ratio]
            n_pos, n_neg = _expected_counts(inner, iteration, n_total)
            chosen, shortfall = brute_force_select(pool, n_pos, n_neg)
            got = apply_strategy(strategy, preds, corpus, iteration, n_total)
            got_ids = {c: {s.utterance_id for s in got.of_class(c)} for c in (P, N)}
            checked += 1
            mismatches += (
                got_ids != chosen
                or (got.shortfall_positive, got.shortfall_negative) != (shortfall[P], shortfall[N])
                or (got.requested_positive, got.requested_negative) != (n_pos, n_neg)
            )
    verdict(5, mismatches == 0, f"{mismatches} mismatches over {checked} strategy applications on 200 pools")


def test_c6_exactly_once_and_conservation(verdict):
    rng = np.random.default_rng(6)
    failures = []
    for trial in range(50):
        n = int(rng.integers(2, 300))
        corpus = make_corpus(n, gold=lambda i: P if i % 3 else N)
        probs = {uid: float(rng.random()) for uid in corpus.ids}
        backend = ScriptedBackend(probs)
        strategy = [Vanilla(), Ratio(float(rng.uniform(0.05, 0.95))),
                    Scheduled((int(rng.integers(2, 20)), 0, int(rng.integers(2, 20))), Vanilla())][trial % 3]
        est = None
        if trial % 2:
            k_pos = int(rng.integers(0, n + 1))
            est = RatioEstimate(k_pos / n, 50, n, k_pos, n - k_pos)
        cfg = RunConfig(strategy=strategy, selection_percent=float(rng.uniform(0.01, 0.3)), ratio_estimate=est, seed=trial)
        state = zero_shot_init(backend, corpus, cfg)
        conserved = len(state.labeled) + len(state.unlabeled_ids) == n
        while not state.stopped:
            iterate_once(state, backend, corpus, cfg)
            conserved &= len(state.labeled) + len(state.unlabeled_ids) == n
        trained = [ex.utterance_id for batch in backend.train_calls for ex in batch]
        if not conserved or len(trained) != len(set(trained)) or set(trained) != set(state.labeled):
            failures.append(trial)

    # counting fixture: 25 positives per iteration against a quota of 250
    corpus = make_corpus(1000)
    backend = ScriptedBackend(lambda uid: 0.99 if int(uid[1:]) % 2 == 0 else 0.01)
    result = run_to_completion(backend, corpus, RunConfig(ratio_estimate=RatioEstimate(0.25, 50, 1000, 250, 750)))
    boundary = (result.stop_reason, result.state.iteration, result.state.cumulative[P]) == ("ratio-stop(positive)", 10, 250)
    verdict(6, not failures and boundary,
            f"failing configs {failures}; counting fixture stop={result.stop_reason} at iteration {result.state.iteration}")


def test_c7_gradient_check(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for trial in range(20):
        model = BuiltinModel(BackendConfig(hash_dim=1024, seed=trial))
        model.weights = rng.normal(0, 0.5, model.weights.shape)
        model.bias = rng.normal(0, 0.5, 2)
        vocab = [f"w{i}" for i in range(30)]
        examples = [TrainExample(f"e{j}", " ".join(rng.choice(vocab, int(rng.integers(1, 8)))), [P, N][int(rng.integers(2))])
                    for j in range(int(rng.integers(1, 6)))]
        g_w, g_b = model.gradient(examples)
        idx = sorted({int(k) for ex in examples for k in model._sparse(ex.words())[0]})
        params = [("w", c, j) for c in range(2) for j in idx] + [("b", c, None) for c in range(2)]
        for kind, c, j in params:
            arr = model.weights if kind == "w" else model.bias
            pos = (c, j) if kind == "w" else c
            orig = arr[pos]
            arr[pos] = orig + 1e-5
            up = model.loss(examples)
            arr[pos] = orig - 1e-5
            down = model.loss(examples)
            arr[pos] = orig
            numeric = (up - down) / 2e-5
            analytic = g_w[c, j] if kind == "w" else g_b[c]
            rel = abs(numeric - analytic) / max(abs(numeric) + abs(analytic), 1e-8)
            worst = max(worst, rel)
    verdict(7, worst < 1e-4, f"max relative error {worst:.2e} over 20 instances")


def test_c8_learning_dynamics_shape(verdict):
    f1_wins = tv_wins = 0
    rows = []
    for seed in SEEDS:
        train, _, source = generate_synthetic(SyntheticSpec(size=2000, seed=seed))
        model = pretrained(seed, source)
        zero = predicted(model, train)
        run_to_completion(model, train, RunConfig(seed=seed))
        final = predicted(model, train)
        f1_zero = bucket_performance(train, zero).mean_f1(0.6)
        f1_final = bucket_performance(train, final).mean_f1(0.6)
        gold = prediction_distribution(train, gold_labels(train))
        tv_zero = tv_distance(prediction_distribution(train, zero), gold)
        tv_final = tv_distance(prediction_distribution(train, final), gold)
        f1_wins += f1_final > f1_zero
        tv_wins += tv_final < tv_zero
        rows.append(f"{f1_zero:.2f}->{f1_final:.2f}/{tv_zero:.2f}->{tv_final:.2f}")
    verdict(8, f1_wins >= 8 and tv_wins >= 8,
            f"high-ratio bucket F1 improved {f1_wins}/10, TV decreased {tv_wins}/10 ({' '.join(rows)})")


def _cli_run(tmp_path, name, extra=()):
    out = tmp_path / name
    rc = cli.main(["run", "--config", str(tmp_path / "cfg.json"), "--corpus", str(tmp_path / "data" / "train.jsonl"),
                   "--test-corpus", str(tmp_path / "data" / "test.jsonl"), "--out", str(out), *extra])
    return rc, out


def _write_synth(tmp_path, size=500, seed=9):
    (tmp_path / "spec.json").write_text(json.dumps({"size": size, "seed": seed}))
    assert cli.main(["synth", "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "data")]) == 0


def test_c9_determinism(tmp_path, verdict):
    _write_synth(tmp_path)
    (tmp_path / "cfg.json").write_text(json.dumps({
        "strategy": {"kind": "ratio", "positive_fraction": 0.5}, "seed": 11,
        "backend": {"kind": "builtin", "pretrain_corpus": "data/source.jsonl", "pretrain_epochs": 2, "hash_dim": HASH_DIM},
    }))
    (_, a), (_, b) = _cli_run(tmp_path, "a"), _cli_run(tmp_path, "b")
    same = {name: (a / name).read_bytes() == (b / name).read_bytes()
            for name in ("pseudo_labels.jsonl", "report.json", "metrics.csv", "curve.csv")}
    verdict(9, all(same.values()), f"byte-identical exports: {same}")


def test_c10_protocol_conformance(tmp_path, verdict):
    train, test, source = generate_synthetic(SyntheticSpec(size=400, seed=10))
    (tmp_path / "source.jsonl").write_bytes(serialize_jsonl(source))
    cfg = RunConfig(strategy=Ratio(0.6), seed=3)

    builtin = BuiltinModel(BackendConfig(seed=3, hash_dim=HASH_DIM)).pretrain(source, PRETRAIN_EPOCHS)
    local = run_to_completion(builtin, train, cfg, test)
    cmd = [sys.executable, "-m", "selftrain.peer", "--pretrain", str(tmp_path / "source.jsonl"),
           "--pretrain-epochs", str(PRETRAIN_EPOCHS), "--seed", "3", "--hash-dim", str(HASH_DIM)]
    with ExternalBackend(cmd, predict_chunk=64) as peer:
        remote = run_to_completion(peer, train, cfg, test)
    identical = (
        remote.state.labeled == local.state.labeled
        and remote.stop_reason == local.stop_reason
        and remote.state.train_batches == local.state.train_batches
        and [r.to_dict() for r in remote.history] == [r.to_dict() for r in local.history]
    )

    # transport failures: peer that exits at once, and one that sends garbage mid-run
    _write_synth(tmp_path, size=200)
    codes = {}
    for name, peer_args in (("exit", peer_cmd("exit_peer.py")),
                            ("garbage", peer_cmd("fixed_peer.py", "0.9", "0.1", "--garbage-after", "2")),
                            ("dies", peer_cmd("fixed_peer.py", "0.9", "0.1", "--die-after", "3"))):
        (tmp_path / "cfg.json").write_text(json.dumps({"backend": {"kind": "external", "cmd": peer_args}}))
        codes[name], _ = _cli_run(tmp_path, name)
    ok = identical and all(c == 3 for c in codes.values())
    verdict(10, ok, f"peer replay identical={identical}; transport-failure exit codes {codes}")
