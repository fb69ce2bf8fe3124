"""Command-line entry points for the whole pipeline.

Every command that writes an artifact also writes a `<out>.manifest.json`
sidecar recording the command, package version, and arguments, so a run can
be reproduced from its outputs alone.  Nothing here depends on wall-clock
time; same inputs and seeds give byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .corpus import (
    CorpusError,
    CorpusPair,
    SyntheticSpec,
    build_vocabulary,
    generate_synthetic,
    load_corpus,
    save_corpus,
    tiny_synthetic_spec,
    tokenize,
)
from .dataprep import (
    DEFAULT_FILTER_RULES,
    DataprepError,
    align_records,
    load_filter_rules,
    load_score_table,
    normalize_entities,
)
from .metrics import (
    ContentLexicon,
    MetricsError,
    evaluate,
    m_bleu,
    save_lexicon,
)
from .model import (
    ModelError,
    beam_search,
    init_params,
    load_checkpoint,
    precision_dtype,
    save_checkpoint,
)
from .retrieval import (
    NoExemplarError,
    RetrievalError,
    TripleIds,
    load_triples,
    save_triples,
)
from .slotfill import slot_fill
from .training import (
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    build_triples,
    gradient_check,
    load_train_config,
    resolve_triples,
    train,
)

_MODULE_OF = {
    CorpusError: "corpus",
    DataprepError: "dataprep",
    NoExemplarError: "retrieval",
    RetrievalError: "retrieval",
    ModelError: "model",
    TrainingError: "training",
    TrainingDiverged: "training",
    MetricsError: "metrics",
}


def _write_manifest(out: str, command: str, args: argparse.Namespace) -> None:
    skip = {"func"}
    payload = {
        "command": command,
        "version": __version__,
        "args": {k: v for k, v in sorted(vars(args).items()) if k not in skip},
    }
    with open(f"{out}.manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, ensure_ascii=False, indent=2, sort_keys=True)
        fh.write("\n")


def _write_jsonl(rows: list[dict], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, separators=(", ", ": ")))
            fh.write("\n")


def _read_generations(path: str) -> dict[str, tuple[str, ...]]:
    out: dict[str, tuple[str, ...]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out[str(obj["id"])] = tuple(str(obj["text"]).split())
            except (json.JSONDecodeError, KeyError) as exc:
                raise MetricsError(f"{path}: line {lineno}: bad generation ({exc})") from None
    return out


def _load_pool(args: argparse.Namespace) -> list[CorpusPair]:
    return load_corpus(args.pool) if args.pool else load_corpus(args.corpus)


def _cmd_gen_synthetic(args: argparse.Namespace) -> int:
    spec = SyntheticSpec(num_pairs=args.pairs, seed=args.seed)
    if args.tiny:
        spec = tiny_synthetic_spec(num_pairs=args.pairs, seed=args.seed)
    save_corpus(generate_synthetic(spec), args.out)
    _write_manifest(args.out, "gen-synthetic", args)
    print(f"wrote {args.pairs} pairs to {args.out}")
    return 0


def _cmd_prepare_nba(args: argparse.Namespace) -> int:
    table = load_score_table(args.table)
    rules = load_filter_rules(args.rules) if args.rules else DEFAULT_FILTER_RULES
    pairs: list[CorpusPair] = []
    skipped = 0
    with open(args.text, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            sentence = normalize_entities(tokenize(line), table.lexicon)
            try:
                record = align_records(sentence, table, rules, name_field=args.name_field)
            except DataprepError:
                skipped += 1
                continue
            pairs.append(CorpusPair(record=record, text=sentence, id=f"nba-{lineno:06d}"))
    if not pairs:
        raise DataprepError(f"{args.text}: no sentence aligned to any record")
    save_corpus(pairs, args.out)
    _write_manifest(args.out, "prepare-nba", args)
    print(f"aligned {len(pairs)} sentences ({skipped} skipped) to {args.out}")
    return 0


def _cmd_retrieve(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pool = _load_pool(args)
    triples = build_triples(
        corpus, pool, args.max_distance, seed=f"{args.seed}:retrieve"
    )
    save_triples(
        [TripleIds(t.id, t.exemplar_id, t.distance) for t in triples], args.out
    )
    _write_manifest(args.out, "retrieve", args)
    print(f"wrote {len(triples)} triples to {args.out}")
    return 0


def _train_config(args: argparse.Namespace) -> TrainConfig:
    config = load_train_config(args.config) if args.config else TrainConfig()
    overrides = {
        "content_weight": getattr(args, "lambda"),
        "coverage_weight": args.eta,
        "learning_rate": args.lr,
        "epochs_pretrain": args.epochs_pretrain,
        "epochs_full": args.epochs_full,
        "max_distance": args.max_distance,
        "seed": args.seed,
        "precision": args.precision,
        "batch_size": args.batch_size,
    }
    return replace(config, **{k: v for k, v in overrides.items() if v is not None})


def _cmd_train(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pool = _load_pool(args)
    config = _train_config(args)
    params, log = train(corpus, pool, config)
    save_checkpoint(params, args.out)
    _write_jsonl(log, f"{args.out}.log.jsonl")
    _write_manifest(args.out, "train", args)
    final = log[-1] if log else {}
    print(f"wrote checkpoint {args.out} after {len(log)} epochs {final}")
    return 0


def _cmd_generate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pool = _load_pool(args)
    triples = resolve_triples(corpus, pool, load_triples(args.triples))
    vocab_pairs = {p.id: p for p in corpus}
    for p in pool:
        vocab_pairs.setdefault(p.id, p)
    vocab = build_vocabulary(list(vocab_pairs.values()), min_count=1)
    params = load_checkpoint(args.checkpoint, vocab, dtype=precision_dtype(args.precision))
    rows = []
    for t in triples:
        tokens = beam_search(params, t.x, t.y_e, width=args.width, max_len=args.max_len)
        rows.append({"id": t.id, "text": " ".join(tokens)})
    _write_jsonl(rows, args.out)
    _write_manifest(args.out, "generate", args)
    print(f"decoded {len(rows)} instances to {args.out}")
    return 0


def _cmd_slotfill(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pool = _load_pool(args)
    triples = resolve_triples(corpus, pool, load_triples(args.triples))
    rows = [
        {"id": t.id, "text": " ".join(slot_fill(t.x, t.x_e, t.y_e))} for t in triples
    ]
    _write_jsonl(rows, args.out)
    _write_manifest(args.out, "slotfill", args)
    print(f"slot-filled {len(rows)} instances to {args.out}")
    return 0


def _plot_by_distance(triples, generations, lexicon, path: str) -> None:
    by_distance: dict[int, list] = {}
    for t in triples:
        by_distance.setdefault(t.distance, []).append(t)
    rows = []
    for d in sorted(by_distance):
        group = by_distance[d]
        report = evaluate(group, {t.id: generations[t.id] for t in group}, lexicon)
        rows.append((d, report))
    if path.endswith(".png"):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        xs = [d for d, _ in rows]
        fig, ax = plt.subplots(figsize=(6, 4))
        for key in ("incl_new", "excl_old", "m_bleu"):
            ax.plot(xs, [getattr(r, key) for _, r in rows], marker="o", label=key)
        ax.set_xlabel("field-set distance")
        ax.set_ylabel("score")
        ax.set_ylim(0, 105)
        ax.legend()
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("distance\tinstances\tm_bleu\tincl_new\texcl_old\tprecision\trecall\n")
            for d, r in rows:
                fh.write(
                    f"{d}\t{r.instances}\t{r.m_bleu:.4f}\t{r.incl_new:.4f}"
                    f"\t{r.excl_old:.4f}\t{r.precision:.4f}\t{r.recall:.4f}\n"
                )


def _cmd_evaluate(args: argparse.Namespace) -> int:
    corpus = load_corpus(args.corpus)
    pool = _load_pool(args)
    triples = resolve_triples(corpus, pool, load_triples(args.triples))
    generations = _read_generations(args.gen)
    seen = {p.id: p for p in corpus}
    for p in pool:
        seen.setdefault(p.id, p)
    lexicon = ContentLexicon.from_pairs(seen.values())
    report = evaluate(triples, generations, lexicon)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, ensure_ascii=False, indent=2)
        fh.write("\n")
    save_lexicon(lexicon, f"{args.out}.lexicon.json")
    if args.plot:
        _plot_by_distance(triples, generations, lexicon, args.plot)
    _write_manifest(args.out, "evaluate", args)
    print(json.dumps(report.to_dict()))
    return 0


def _cmd_gradcheck(args: argparse.Namespace) -> int:
    corpus = generate_synthetic(tiny_synthetic_spec(num_pairs=30, seed=args.seed))
    vocab = build_vocabulary(corpus, min_count=1)
    # scale 0.8 keeps every gradient coordinate above the float64 noise floor
    # of central differences; at tiny scales the check measures noise, not math
    params = init_params(vocab, embed_size=8, hidden_size=8, seed=args.seed, scale=0.8)
    lam = getattr(args, "lambda")
    config = TrainConfig(
        content_weight=lam if lam is not None else 0.2,
        coverage_weight=args.eta if args.eta is not None else 1.0,
        seed=args.seed,
    )
    triples = build_triples(
        corpus[: args.triples_count], corpus, max_distance=3, seed=f"{args.seed}:gradcheck"
    )
    worst = 0.0
    for k, triple in enumerate(triples):
        err = gradient_check(
            params, triple, config, epsilon=args.epsilon, min_samples=args.samples, seed=k
        )
        worst = max(worst, err)
    ok = worst <= args.tolerance
    print(f"max relative error {worst:.3e} over {len(triples)} triples "
          f"({'OK' if ok else 'FAIL'}, tolerance {args.tolerance:.1e})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="recstyle", description=__doc__)
    parser.add_argument("--version", action="version", version=f"recstyle {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="write a synthetic restaurant corpus")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--pairs", type=int, default=2000)
    p.add_argument("--tiny", action="store_true", help="three-field small-vocabulary variant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("prepare-nba", help="align box-score rows with summary sentences")
    p.add_argument("--table", required=True, help="line-delimited {entity, field, value} rows")
    p.add_argument("--text", required=True, help="raw summary sentences, one per line")
    p.add_argument("--rules", help="line-delimited {trigger, fields, window} filter rules")
    p.add_argument("--name-field", default="PLAYER")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_prepare_nba)

    p = sub.add_parser("retrieve", help="pick one exemplar per corpus instance")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pool", help="exemplar pool corpus (defaults to --corpus)")
    p.add_argument("--max-distance", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_retrieve)

    p = sub.add_parser("train", help="two-phase weakly supervised training")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pool")
    p.add_argument("--config", help="flat key = value TrainConfig file")
    p.add_argument("--seed", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--lambda", type=float, help="content NLL weight in (0, 1)")
    p.add_argument("--eta", type=float, help="coverage penalty weight")
    p.add_argument("--epochs-pretrain", type=int)
    p.add_argument("--epochs-full", type=int)
    p.add_argument("--max-distance", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--precision", choices=("f32", "f64"))
    p.add_argument("--out", required=True, help="checkpoint path; log goes to <out>.log.jsonl")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("generate", help="beam-search decode stored triples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pool")
    p.add_argument("--triples", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--width", type=int, default=5)
    p.add_argument("--max-len", type=int, default=50)
    p.add_argument("--precision", choices=("f32", "f64"), default="f64")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_generate)

    p = sub.add_parser("slotfill", help="slot-filling baseline over stored triples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pool")
    p.add_argument("--triples", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_slotfill)

    p = sub.add_parser("evaluate", help="score generations against their triples")
    p.add_argument("--corpus", required=True)
    p.add_argument("--pool")
    p.add_argument("--triples", required=True)
    p.add_argument("--gen", required=True, help="line-delimited {id, text} generations")
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="score-vs-distance table (.tsv) or chart (.png)")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--triples-count", type=int, default=10)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--lambda", type=float)
    p.add_argument("--eta", type=float)
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except tuple(_MODULE_OF) as exc:
        module = next(name for typ, name in _MODULE_OF.items() if isinstance(exc, typ))
        print(f"error [{module}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error [io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
