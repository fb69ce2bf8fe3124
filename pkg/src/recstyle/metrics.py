"""Evaluation: masked BLEU for style embodiment, value matching for content fidelity.

Content tokens are identified by a dataset-wide lexicon of normalized record
values plus a numeral predicate (any token containing a digit).  This exact
matching stands in for learned extractors; the toolkit's normalization makes
every value a single token, so expression is literal token presence.  The
lexicon is serialized next to reports so a score can always be re-derived.
"""

from __future__ import annotations

import json
from collections.abc import Iterable, Mapping, Sequence
from collections import Counter
from dataclasses import dataclass
from math import exp, log
from pathlib import Path

from .corpus import MASK, CorpusPair, Record


class MetricsError(ValueError):
    """Misaligned inputs or an unusable lexicon."""


def _has_digit(token: str) -> bool:
    return any(ch.isdigit() for ch in token)


@dataclass(frozen=True)
class ContentLexicon:
    """Value-token set plus the numeral predicate."""

    tokens: frozenset[str]

    def __post_init__(self) -> None:
        if not self.tokens:
            raise MetricsError("content lexicon must be non-empty")

    def is_content(self, token: str) -> bool:
        return token in self.tokens or _has_digit(token)

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "ContentLexicon":
        return cls(frozenset(v for r in records for v in r.values()))

    @classmethod
    def from_pairs(cls, pairs: Iterable[CorpusPair]) -> "ContentLexicon":
        return cls.from_records(p.record for p in pairs)


def save_lexicon(lexicon: ContentLexicon, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(sorted(lexicon.tokens), fh, ensure_ascii=False, indent=0)
        fh.write("\n")


def load_lexicon(path: str | Path) -> ContentLexicon:
    with open(path, encoding="utf-8") as fh:
        return ContentLexicon(frozenset(json.load(fh)))


def mask_content(tokens: Sequence[str], lexicon: ContentLexicon) -> tuple[str, ...]:
    """Replace every content token with the mask symbol; idempotent."""
    return tuple(MASK if lexicon.is_content(t) else t for t in tokens)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    max_order: int = 4,
) -> float:
    """Corpus-level BLEU without smoothing, brevity penalty exp(1 - r/c).

    Orders for which no candidate produces any n-gram (every candidate shorter
    than n) drop out of the geometric mean, so identity still scores 100 on
    very short sequences.
    """
    if not candidates or len(candidates) != len(references):
        raise MetricsError(
            f"need equal-length non-empty lists, got {len(candidates)}/{len(references)}"
        )
    cand_len = 0
    ref_len = 0
    matches = [0] * max_order
    totals = [0] * max_order
    for cand, ref in zip(candidates, references):
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, max_order + 1):
            cg = _ngrams(cand, n)
            rg = _ngrams(ref, n)
            totals[n - 1] += sum(cg.values())
            matches[n - 1] += sum(min(count, rg[gram]) for gram, count in cg.items())
    log_sum = 0.0
    orders = 0
    for m, t in zip(matches, totals):
        if t == 0:
            continue
        if m == 0:
            return 0.0
        log_sum += log(m / t)
        orders += 1
    if orders == 0 or cand_len == 0:
        return 0.0
    bp = 1.0 if cand_len >= ref_len else exp(1.0 - ref_len / cand_len)
    return 100.0 * bp * exp(log_sum / orders)


def m_bleu(
    candidates: Sequence[Sequence[str]],
    references: Sequence[Sequence[str]],
    lexicon: ContentLexicon,
    max_order: int = 4,
) -> float:
    """BLEU-4 after masking content tokens on both sides."""
    masked_c = [mask_content(c, lexicon) for c in candidates]
    masked_r = [mask_content(r, lexicon) for r in references]
    return corpus_bleu(masked_c, masked_r, max_order)


@dataclass(frozen=True)
class InstanceScores:
    incl_new: float
    excl_old: float
    precision: float
    recall: float


def content_fidelity(
    generated: Sequence[str],
    x: Record,
    x_e: Record,
    lexicon: ContentLexicon | None = None,
) -> InstanceScores:
    """Value expression scores for one generation.

    A value is expressed when its token occurs in the output.  Without an
    explicit lexicon, precision falls back to the two records' own values
    plus the numeral predicate.
    """
    if lexicon is None:
        lexicon = ContentLexicon(frozenset(x.values()) | frozenset(x_e.values()))
    present = set(generated)
    new_values = set(x.values())
    old_only = set(x_e.values()) - new_values
    incl_new = 100.0 * len(new_values & present) / len(new_values)
    if old_only:
        excl_old = 100.0 * len(old_only - present) / len(old_only)
    else:
        excl_old = 100.0
    hits = {t for t in present if lexicon.is_content(t)}
    precision = 100.0 * len(hits & new_values) / len(hits) if hits else 100.0
    return InstanceScores(
        incl_new=incl_new, excl_old=excl_old, precision=precision, recall=incl_new
    )


@dataclass(frozen=True)
class EvalReport:
    """Corpus-level m-BLEU plus macro-averaged fidelity scores."""

    m_bleu: float
    incl_new: float
    excl_old: float
    precision: float
    recall: float
    instances: int

    def __post_init__(self) -> None:
        for name in ("m_bleu", "incl_new", "excl_old", "precision", "recall"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise MetricsError(f"{name} = {v} outside [0, 100]")

    def to_dict(self) -> dict:
        return {
            "m_bleu": self.m_bleu,
            "incl_new": self.incl_new,
            "excl_old": self.excl_old,
            "precision": self.precision,
            "recall": self.recall,
            "instances": self.instances,
        }


def evaluate(
    triples: Sequence,
    generations: Mapping[str, Sequence[str]],
    lexicon: ContentLexicon,
) -> EvalReport:
    """Score generations against their triples; ids must match exactly.

    m-BLEU uses the exemplar sentences as references; fidelity compares the
    generation with the query and exemplar records.
    """
    if not triples:
        raise MetricsError("cannot evaluate zero triples")
    triple_ids = [t.id for t in triples]
    missing = [i for i in triple_ids if i not in generations]
    if missing:
        raise MetricsError(f"no generation for ids {missing[:5]}")
    extra = set(generations) - set(triple_ids)
    if extra:
        raise MetricsError(f"generations for unknown ids {sorted(extra)[:5]}")
    cands = [tuple(generations[t.id]) for t in triples]
    refs = [tuple(t.y_e) for t in triples]
    score = m_bleu(cands, refs, lexicon)
    per = [content_fidelity(c, t.x, t.x_e, lexicon) for c, t in zip(cands, triples)]
    n = len(per)
    return EvalReport(
        m_bleu=score,
        incl_new=sum(s.incl_new for s in per) / n,
        excl_old=sum(s.excl_old for s in per) / n,
        precision=sum(s.precision for s in per) / n,
        recall=sum(s.recall for s in per) / n,
        instances=n,
    )
