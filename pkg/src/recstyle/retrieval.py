"""Exemplar retrieval by field-set distance over a training pool."""

from __future__ import annotations

import json
import random
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .corpus import CorpusPair, Record


class RetrievalError(ValueError):
    """Malformed triples file or bad retrieval arguments."""


class NoExemplarError(LookupError):
    """No pool entry within the distance budget."""


def field_set_distance(x: Record, x_e: Record) -> int:
    """Size of the symmetric difference between the two field sets."""
    a, b = x.field_set(), x_e.field_set()
    return len(a | b) - len(a & b)


def candidate_pairs(
    record: Record,
    pool: Sequence[CorpusPair],
    max_distance: int,
    prefer_equal_size: bool = True,
    exclude_id: str | None = None,
) -> list[CorpusPair]:
    """All admissible exemplars for a record, in pool order.

    With prefer_equal_size, candidates whose records have the same number of
    fields as the query win outright when any exist; others are dropped.
    """
    if max_distance < 0:
        raise RetrievalError(f"max_distance must be >= 0, got {max_distance}")
    within = [
        p
        for p in pool
        if p.id != exclude_id and field_set_distance(record, p.record) <= max_distance
    ]
    if prefer_equal_size:
        same_size = [p for p in within if len(p.record) == len(record)]
        if same_size:
            return same_size
    return within


def retrieve_exemplar(
    record: Record,
    pool: Sequence[CorpusPair],
    max_distance: int,
    seed: int | str | random.Random = 0,
    prefer_equal_size: bool = True,
    exclude_id: str | None = None,
) -> CorpusPair:
    """Uniformly pick one admissible exemplar; raises NoExemplarError when none."""
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    cands = candidate_pairs(record, pool, max_distance, prefer_equal_size, exclude_id)
    if not cands:
        raise NoExemplarError(
            f"no exemplar within distance {max_distance} for fields {sorted(record.field_set())}"
        )
    return cands[rng.randrange(len(cands))]


class RetrievalIndex:
    """Candidate lists cached per distinct query field set.

    Records sharing a field set share candidates, so retrieving for a whole
    corpus costs one pool scan per distinct set instead of per record.
    Results (and rng consumption) are identical to candidate_pairs /
    retrieve_exemplar call for call.
    """

    def __init__(
        self, pool: Sequence[CorpusPair], max_distance: int, prefer_equal_size: bool = True
    ):
        if max_distance < 0:
            raise RetrievalError(f"max_distance must be >= 0, got {max_distance}")
        self.pool = list(pool)
        self.max_distance = max_distance
        self.prefer_equal_size = prefer_equal_size
        self._pool_sets = [p.record.field_set() for p in self.pool]
        self._cache: dict[frozenset[str], tuple[list[int], list[int]]] = {}

    def _lists(self, query: frozenset[str]) -> tuple[list[int], list[int]]:
        got = self._cache.get(query)
        if got is None:
            nq = len(query)
            preferred: list[int] = []
            admissible: list[int] = []
            for i, ps in enumerate(self._pool_sets):
                if nq + len(ps) - 2 * len(query & ps) <= self.max_distance:
                    admissible.append(i)
                    if len(ps) == nq:
                        preferred.append(i)
            got = (preferred, admissible)
            self._cache[query] = got
        return got

    def candidates(self, record: Record, exclude_id: str | None = None) -> list[CorpusPair]:
        preferred, admissible = self._lists(record.field_set())
        pref = [self.pool[i] for i in preferred if self.pool[i].id != exclude_id]
        if self.prefer_equal_size and pref:
            return pref
        return [self.pool[i] for i in admissible if self.pool[i].id != exclude_id]

    def retrieve(
        self, record: Record, rng: random.Random, exclude_id: str | None = None
    ) -> CorpusPair:
        cands = self.candidates(record, exclude_id)
        if not cands:
            raise NoExemplarError(
                f"no exemplar within distance {self.max_distance} "
                f"for fields {sorted(record.field_set())}"
            )
        return cands[rng.randrange(len(cands))]


@dataclass(frozen=True)
class TripleIds:
    """One retrieval outcome in wire form: which exemplar serves which instance."""

    id: str
    exemplar_id: str
    distance: int


def save_triples(triples: Sequence[TripleIds], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            obj = {"id": t.id, "exemplar_id": t.exemplar_id, "distance": t.distance}
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")))
            fh.write("\n")


def load_triples(path: str | Path) -> list[TripleIds]:
    out: list[TripleIds] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                out.append(
                    TripleIds(str(obj["id"]), str(obj["exemplar_id"]), int(obj["distance"]))
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise RetrievalError(f"{path}: line {lineno}: bad triple ({exc})") from None
    return out
