"""End-to-end acceptance checks, one test per numbered criterion.

Heavy artifacts (the 2,000-pair synthetic corpus, the pretrained model, the
coverage / no-coverage full runs) are built once per module and shared.  Each
test funnels its verdict through the `criterion` fixture, which prints a
single '[criterion N] PASS|FAIL ...' line and asserts.
"""

import random
import time

import numpy as np
import pytest
from test_dataprep import render_cardinal

from recstyle.cli import main as cli_main
from recstyle.corpus import (
    BOS,
    CorpusPair,
    Record,
    SyntheticSpec,
    build_vocabulary,
    generate_synthetic,
    tiny_synthetic_spec,
)
from recstyle.dataprep import words_to_number
from recstyle.metrics import ContentLexicon, evaluate, m_bleu
from recstyle.model import (
    beam_search,
    decode_step,
    encode_sources,
    init_params,
    token_probability,
)
from recstyle.retrieval import candidate_pairs, field_set_distance, retrieve_exemplar
from recstyle.slotfill import slot_fill
from recstyle.training import (
    TrainConfig,
    build_triples,
    coverage_penalty,
    gradient_check,
    next_token_accuracy,
    train,
)

SEED = 7


@pytest.fixture(scope="module")
def train_corpus():
    return generate_synthetic(SyntheticSpec())


@pytest.fixture(scope="module")
def test_corpus():
    """Held-out 500-pair corpus; fresh ids so it cannot collide with the pool."""
    raw = generate_synthetic(SyntheticSpec(num_pairs=500, seed=8))
    return [CorpusPair(p.record, p.text, f"test-{i:06d}") for i, p in enumerate(raw)]


@pytest.fixture(scope="module")
def lexicon(train_corpus):
    return ContentLexicon.from_pairs(train_corpus)


@pytest.fixture(scope="module")
def pretrained(train_corpus):
    """Phase-1 only (lambda=0, eta=0), 30 epochs; returns (params, seconds)."""
    config = TrainConfig(epochs_pretrain=30, epochs_full=0, seed=SEED)
    t0 = time.perf_counter()
    params, _ = train(train_corpus, train_corpus, config)
    return params, time.perf_counter() - t0


@pytest.fixture(scope="module")
def trained(train_corpus):
    """Coverage / no-coverage full runs from a shared 10-epoch style warm-up.

    The balance comparison runs mid-training on purpose: at full convergence
    both variants copy every value of this small corpus and the coverage
    effect disappears into per-instance noise.
    """
    warmup, _ = train(
        train_corpus, train_corpus, TrainConfig(epochs_pretrain=10, epochs_full=0, seed=SEED)
    )
    out = {}
    for name, eta in (("cov", 1.0), ("nocov", 0.0)):
        config = TrainConfig(
            epochs_pretrain=0,
            epochs_full=10,
            content_weight=0.2,
            coverage_weight=eta,
            seed=SEED,
        )
        out[name], _ = train(train_corpus, train_corpus, config, start_params=warmup)
    return out


@pytest.fixture(scope="module")
def test_triples(test_corpus, train_corpus):
    return build_triples(test_corpus, train_corpus, 2, seed=f"{SEED}:test")


def model_report(params, triples, lexicon):
    gens = {t.id: beam_search(params, t.x, t.y_e, width=5, max_len=50) for t in triples}
    return evaluate(triples, gens, lexicon)


def slot_report(triples, lexicon):
    gens = {t.id: slot_fill(t.x, t.x_e, t.y_e) for t in triples}
    return evaluate(triples, gens, lexicon)


def test_criterion_1_gradient_check(criterion):
    corpus = generate_synthetic(tiny_synthetic_spec())
    vocab = build_vocabulary(corpus)
    # scale=0.8 keeps gradient coordinates above the f64 central-difference
    # noise floor; the check itself is scale-agnostic
    params = init_params(vocab, embed_size=8, hidden_size=8, seed=5, scale=0.8)
    config = TrainConfig(content_weight=0.2, coverage_weight=1.0, embed_size=8, hidden_size=8)
    triples = build_triples(corpus, corpus, 2, seed="accept:1")[:10]
    t0 = time.perf_counter()
    errs = [
        gradient_check(params, triple, config, epsilon=1e-5, seed=i)
        for i, triple in enumerate(triples)
    ]
    dt = time.perf_counter() - t0
    worst = max(errs)
    criterion(
        1,
        len(vocab) <= 50 and len(errs) >= 10 and worst <= 1e-4 and dt < 120.0,
        f"max rel err {worst:.3g} over {len(errs)} triples, |V|={len(vocab)}, {dt:.1f}s",
    )


def test_criterion_2_normalization(criterion, train_corpus):
    vocab = build_vocabulary(train_corpus)
    models = [
        init_params(vocab, embed_size=16, hidden_size=16, seed=11),
        init_params(vocab, embed_size=16, hidden_size=16, seed=12, scale=0.5),
    ]
    rng = random.Random("accept:2")
    worst_v = worst_x = worst_union = 0.0
    steps = 0
    while steps < 1000:
        params = models[rng.randrange(len(models))]
        pair = train_corpus[rng.randrange(len(train_corpus))]
        exemplar = train_corpus[rng.randrange(len(train_corpus))].text
        sources = encode_sources(params, pair.record, exemplar)
        state = sources.initial_state
        union = set(vocab.tokens) | set(pair.record.values())
        prev = BOS
        for _ in range(rng.randrange(1, 8)):
            step, state = decode_step(params, state, prev, sources)
            worst_v = max(worst_v, abs(float(step.vocab_dist.sum()) - 1.0))
            worst_x = max(worst_x, abs(float(step.copy_dist.sum()) - 1.0))
            total = sum(token_probability(step, sources, tok) for tok in union)
            worst_union = max(worst_union, abs(total - 1.0))
            steps += 1
            if rng.random() < 0.3:
                prev = rng.choice(pair.record.values())
            else:
                prev = vocab.token(rng.randrange(len(vocab)))
            if steps >= 1000:
                break
    criterion(
        2,
        worst_v <= 1e-6 and worst_x <= 1e-6 and worst_union <= 1e-6,
        f"worst |sum-1| over {steps} steps: P_V {worst_v:.2e}, "
        f"P_x {worst_x:.2e}, union {worst_union:.2e}",
    )


def test_criterion_3_coverage_closed_form(criterion):
    exact = [coverage_penalty(np.eye(n), n) for n in (1, 2, 3, 5, 8)]
    split = np.array([[0.25, 0.5], [0.5, 0.25], [0.25, 0.25]])
    exact.append(coverage_penalty(split, 2))
    hand = [
        (np.array([[0.3, 0.7]]), 2, (0.3 - 1.0) ** 2 + (0.7 - 1.0) ** 2),
        (np.array([[0.3, 0.7], [0.4, 0.6]]), 2, (0.7 - 1.0) ** 2 + (1.3 - 1.0) ** 2),
        (np.array([[0.1, 0.2, 0.3]]), 3, 0.81 + 0.64 + 0.49),
        (np.zeros((4, 3)), 3, 3.0),
    ]
    worst = max(abs(coverage_penalty(dists, size) - want) for dists, size, want in hand)
    criterion(
        3,
        all(value == 0.0 for value in exact) and worst <= 1e-12,
        f"exact-one aggregates give {sorted(set(exact))}, hand-case err {worst:.2e}",
    )


def test_criterion_4_slotfill_identity(criterion, train_corpus, lexicon):
    triples = build_triples(train_corpus, train_corpus, 2, seed="accept:4")[:1000]
    t0 = time.perf_counter()
    cands = [slot_fill(t.x, t.x_e, t.y_e) for t in triples]
    score = m_bleu(cands, [t.y_e for t in triples], lexicon)
    dt = time.perf_counter() - t0
    criterion(
        4,
        score == 100.0 and dt < 10.0,
        f"m-BLEU {score} on {len(triples)} instances in {dt:.2f}s",
    )


def test_criterion_5_style_autoencoding(criterion, train_corpus, pretrained):
    params, seconds = pretrained
    triples = build_triples(train_corpus, train_corpus, 2, seed=f"{SEED}:acc")
    accuracy = next_token_accuracy(params, triples)
    criterion(
        5,
        accuracy >= 0.95 and seconds < 900.0,
        f"teacher-forced accuracy {accuracy:.4f} after 30 pretrain epochs ({seconds:.0f}s)",
    )


def test_criterion_6_training_balance(criterion, trained, test_triples, lexicon):
    rep_cov = model_report(trained["cov"], test_triples, lexicon)
    rep_nocov = model_report(trained["nocov"], test_triples, lexicon)
    rep_untrained = model_report(init_params(trained["cov"].vocab, seed=99), test_triples, lexicon)
    rep_slot = slot_report(test_triples, lexicon)
    criterion(
        6,
        rep_cov.incl_new > rep_untrained.incl_new
        and rep_cov.incl_new > rep_slot.incl_new
        and rep_cov.m_bleu >= 50.0
        and rep_cov.incl_new >= rep_nocov.incl_new,
        f"incl_new trained {rep_cov.incl_new:.2f} vs untrained {rep_untrained.incl_new:.2f} "
        f"vs slotfill {rep_slot.incl_new:.2f}; m-BLEU {rep_cov.m_bleu:.2f}; "
        f"eta=0 incl_new {rep_nocov.incl_new:.2f}",
    )


def test_criterion_7_distance_sweep(criterion, trained, test_corpus, train_corpus, lexicon):
    slot_vals, model_vals = [], []
    for distance in (1, 2, 3, 4):
        triples = build_triples(test_corpus, train_corpus, distance, seed=f"{SEED}:sweep")
        slot_vals.append(slot_report(triples, lexicon).excl_old)
        model_vals.append(model_report(trained["cov"], triples, lexicon).excl_old)
    non_increasing = all(b <= a + 1e-9 for a, b in zip(slot_vals, slot_vals[1:]))
    slot_drop = abs(slot_vals[0] - slot_vals[-1])
    model_drop = abs(model_vals[0] - model_vals[-1])
    criterion(
        7,
        non_increasing and model_drop < slot_drop,
        f"slotfill excl_old {[round(v, 2) for v in slot_vals]} (drop {slot_drop:.2f}), "
        f"model excl_old {[round(v, 2) for v in model_vals]} (drop {model_drop:.2f})",
    )


def test_criterion_8_retrieval_oracle(criterion):
    pool = generate_synthetic(SyntheticSpec(num_pairs=10_000, seed=13))
    rng = random.Random("accept:8")
    scan_bad = 0
    scans = 30
    for k in range(scans):
        query = pool[rng.randrange(len(pool))]
        max_distance = rng.randrange(0, 5)
        prefer = rng.random() < 0.7
        exclude = query.id if rng.random() < 0.5 else None
        qset = query.record.field_set()
        within = [
            p
            for p in pool
            if p.id != exclude and len(p.record.field_set() ^ qset) <= max_distance
        ]
        same = [p for p in within if len(p.record) == len(query.record)]
        want = same if prefer and same else within
        got = candidate_pairs(
            query.record, pool, max_distance, prefer_equal_size=prefer, exclude_id=exclude
        )
        scan_bad += [p.id for p in got] != [p.id for p in want]
        if want:
            pick = retrieve_exemplar(
                query.record,
                pool,
                max_distance,
                seed=random.Random(f"pick:{k}"),
                prefer_equal_size=prefer,
                exclude_id=exclude,
            )
            mirror = random.Random(f"pick:{k}")
            scan_bad += pick.id != want[mirror.randrange(len(want))].id
    fields = [f"f{i}" for i in range(12)]
    dist_bad = 0
    pairs = 10_000
    for _ in range(pairs):
        a = frozenset(rng.sample(fields, rng.randrange(1, 9)))
        b = frozenset(rng.sample(fields, rng.randrange(1, 9)))
        rec_a = Record(tuple((f, "v") for f in sorted(a)))
        rec_b = Record(tuple((f, "v") for f in sorted(b)))
        dist_bad += field_set_distance(rec_a, rec_b) != len(a ^ b)
    criterion(
        8,
        scan_bad == 0 and dist_bad == 0,
        f"{scans} scans on a {len(pool)}-record pool ({scan_bad} mismatches), "
        f"{pairs} distance pairs ({dist_bad} mismatches)",
    )


def test_criterion_9_number_words(criterion):
    bad = []
    for n in range(1000):
        tokens = tuple(render_cardinal(n).split())
        if words_to_number(tokens) != (n, len(tokens)):
            bad.append(n)
    criterion(
        9,
        not bad,
        "all cardinals 0-999 round-trip" if not bad else f"{len(bad)} failures, first {bad[:5]}",
    )


def _run_pipeline(root, monkeypatch):
    # run from inside the directory with bare filenames so the recorded
    # arguments (and thus the manifests) are identical across runs
    root.mkdir(parents=True, exist_ok=True)
    monkeypatch.chdir(root)
    stages = [
        ["gen-synthetic", "--tiny", "--pairs", "30", "--seed", "5",
         "--out", "corpus.jsonl"],
        ["retrieve", "--corpus", "corpus.jsonl", "--max-distance", "2",
         "--seed", "5", "--out", "triples.jsonl"],
        ["train", "--corpus", "corpus.jsonl", "--seed", "5", "--precision", "f64",
         "--epochs-pretrain", "2", "--epochs-full", "2", "--out", "model.ckpt"],
        ["generate", "--corpus", "corpus.jsonl", "--triples", "triples.jsonl",
         "--checkpoint", "model.ckpt", "--width", "2", "--max-len", "16",
         "--out", "gen.jsonl"],
        ["slotfill", "--corpus", "corpus.jsonl", "--triples", "triples.jsonl",
         "--out", "slot.jsonl"],
        ["evaluate", "--corpus", "corpus.jsonl", "--triples", "triples.jsonl",
         "--gen", "gen.jsonl", "--out", "report.json"],
    ]
    for argv in stages:
        assert cli_main(argv) == 0
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if p.is_file()}


def test_criterion_10_determinism(criterion, tmp_path, monkeypatch):
    first = _run_pipeline(tmp_path / "a", monkeypatch)
    second = _run_pipeline(tmp_path / "b", monkeypatch)
    differing = sorted(
        name for name in set(first) | set(second) if first.get(name) != second.get(name)
    )
    criterion(
        10,
        sorted(first) == sorted(second) and not differing,
        f"{len(first)} artifacts byte-identical across runs"
        if not differing
        else f"artifacts differ: {differing}",
    )
