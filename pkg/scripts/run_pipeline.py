#!/usr/bin/env python3
"""Run the whole desk-scale pipeline into one directory.

Synthesizes a corpus, retrieves exemplars, trains the generator, decodes,
slot-fills the same triples, and writes evaluation reports for both systems.
Every artifact lands under --workdir; rerunning with the same seed reproduces
the files byte for byte.
"""

import argparse
import sys
from pathlib import Path

from recstyle.cli import main as cli


def sh(*argv: str) -> None:
    code = cli(list(argv))
    if code != 0:
        sys.exit(code)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--workdir", default="pipeline_out")
    ap.add_argument("--pairs", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--tiny", action="store_true", help="small corpus for a fast smoke run")
    ap.add_argument("--epochs-pretrain", type=int, default=20)
    ap.add_argument("--epochs-full", type=int, default=10)
    ap.add_argument("--max-distance", type=int, default=2)
    args = ap.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    corpus = str(work / "corpus.jsonl")
    triples = str(work / "triples.jsonl")
    ckpt = str(work / "model.ckpt")
    gen = str(work / "generated.jsonl")
    slot = str(work / "slotfill.jsonl")

    gen_args = ["gen-synthetic", "--pairs", str(args.pairs), "--seed", str(args.seed),
                "--out", corpus]
    if args.tiny:
        gen_args.insert(1, "--tiny")
    sh(*gen_args)
    sh("retrieve", "--corpus", corpus, "--max-distance", str(args.max_distance),
       "--seed", str(args.seed), "--out", triples)
    sh("train", "--corpus", corpus, "--seed", str(args.seed),
       "--epochs-pretrain", str(args.epochs_pretrain),
       "--epochs-full", str(args.epochs_full),
       "--max-distance", str(args.max_distance), "--out", ckpt)
    sh("generate", "--corpus", corpus, "--triples", triples, "--checkpoint", ckpt,
       "--out", gen)
    sh("slotfill", "--corpus", corpus, "--triples", triples, "--out", slot)
    sh("evaluate", "--corpus", corpus, "--triples", triples, "--gen", gen,
       "--out", str(work / "report_model.json"),
       "--plot", str(work / "by_distance_model.tsv"))
    sh("evaluate", "--corpus", corpus, "--triples", triples, "--gen", slot,
       "--out", str(work / "report_slotfill.json"),
       "--plot", str(work / "by_distance_slotfill.tsv"))
    print(f"pipeline artifacts in {work}/")


if __name__ == "__main__":
    main()
