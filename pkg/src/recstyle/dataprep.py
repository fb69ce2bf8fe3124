"""Alignment pipeline that distils (record, sentence) pairs out of raw game summaries."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .corpus import MAX_RECORD_ENTRIES, CorpusError, Record


class DataprepError(ValueError):
    """Alignment input that cannot be turned into a record."""


_UNITS = {
    "zero": 0, "one": 1, "two": 2, "three": 3, "four": 4,
    "five": 5, "six": 6, "seven": 7, "eight": 8, "nine": 9,
}
_TEENS = {
    "ten": 10, "eleven": 11, "twelve": 12, "thirteen": 13, "fourteen": 14,
    "fifteen": 15, "sixteen": 16, "seventeen": 17, "eighteen": 18, "nineteen": 19,
}
_TENS = {
    "twenty": 20, "thirty": 30, "forty": 40, "fifty": 50,
    "sixty": 60, "seventy": 70, "eighty": 80, "ninety": 90,
}


def _small_word(tok: str) -> int | None:
    """One token worth 0..99: unit, teen, ten, or hyphenated compound."""
    if tok in _UNITS:
        return _UNITS[tok]
    if tok in _TEENS:
        return _TEENS[tok]
    if tok in _TENS:
        return _TENS[tok]
    head, _, tail = tok.partition("-")
    if tail and head in _TENS and tail in _UNITS and _UNITS[tail] != 0:
        return _TENS[head] + _UNITS[tail]
    return None


def _tail_value(tokens: Sequence[str]) -> tuple[int, int] | None:
    """Parse a 1..99 remainder after 'hundred'; returns (value, tokens consumed)."""
    if not tokens:
        return None
    v = _small_word(tokens[0])
    if v is None or v == 0:
        return None
    consumed = 1
    if tokens[0] in _TENS and len(tokens) > 1 and _UNITS.get(tokens[1], 0) != 0:
        v += _UNITS[tokens[1]]
        consumed = 2
    return v, consumed


def words_to_number(tokens: Sequence[str]) -> tuple[int, int] | None:
    """Greedy parse of a digit string or spelled-out 0..999 at the window start.

    Returns (value, tokens consumed) or None.  A dangling 'and' after 'hundred'
    is not consumed unless a remainder follows.
    """
    if not tokens:
        return None
    head = tokens[0]
    if head.isdigit():
        return int(head), 1
    first = _small_word(head)
    if first is None:
        return None
    value, consumed = first, 1
    if 1 <= first <= 9 and len(tokens) > 1 and tokens[1] == "hundred":
        value, consumed = first * 100, 2
        rest = consumed
        if len(tokens) > rest and tokens[rest] == "and":
            rest += 1
        tail = _tail_value(tokens[rest:])
        if tail is not None:
            value += tail[0]
            consumed = rest + tail[1]
    elif head in _TENS and len(tokens) > 1 and _UNITS.get(tokens[1], 0) != 0:
        value += _UNITS[tokens[1]]
        consumed = 2
    return value, consumed


def _entity_index(lexicon: Sequence[str]) -> tuple[dict[int, set[tuple[str, ...]]], int]:
    """Word-sequence index over lexicon entries; collapsed forms match as one token."""
    by_len: dict[int, set[tuple[str, ...]]] = {}
    max_len = 1
    for entry in lexicon:
        words = tuple(entry.lower().replace("_", " ").split())
        if not words:
            raise DataprepError(f"empty lexicon entry {entry!r}")
        by_len.setdefault(len(words), set()).add(words)
        by_len.setdefault(1, set()).add(("_".join(words),))
        max_len = max(max_len, len(words))
    return by_len, max_len


def _collapse(
    sentence: Sequence[str], lexicon: Sequence[str]
) -> tuple[list[str], list[tuple[int, str]]]:
    by_len, max_len = _entity_index(lexicon)
    out: list[str] = []
    matches: list[tuple[int, str]] = []
    i = 0
    while i < len(sentence):
        hit = 0
        for n in range(min(max_len, len(sentence) - i), 0, -1):
            if tuple(sentence[i : i + n]) in by_len.get(n, ()):
                hit = n
                break
        if hit:
            tok = "_".join(sentence[i : i + hit])
            matches.append((len(out), tok))
            out.append(tok)
            i += hit
        else:
            out.append(sentence[i])
            i += 1
    return out, matches


def find_entities(sentence: Sequence[str], lexicon: Sequence[str]) -> list[tuple[int, str]]:
    """Longest-match entity mentions as (position in normalized sentence, joined token)."""
    return _collapse(sentence, lexicon)[1]


def normalize_entities(sentence: Sequence[str], lexicon: Sequence[str]) -> tuple[str, ...]:
    """Rewrite multi-word entity mentions as single underscore-joined tokens."""
    return tuple(_collapse(sentence, lexicon)[0])


@dataclass(frozen=True)
class FilterRule:
    """Restricts which fields a nearby number may align to when trigger appears."""

    trigger: str
    fields: tuple[str, ...]
    window: int = 3

    def __post_init__(self) -> None:
        if not self.trigger or any(ch.isspace() for ch in self.trigger):
            raise DataprepError(f"bad trigger {self.trigger!r}")
        if not self.fields:
            raise DataprepError(f"rule {self.trigger!r} allows no fields")
        if self.window < 0:
            raise DataprepError("window must be >= 0")


# Starter rules for box-score prose; callers with other domains pass their own.
DEFAULT_FILTER_RULES: tuple[FilterRule, ...] = tuple(
    FilterRule(trigger, (fld,))
    for trigger, fld in (
        ("point", "PTS"), ("points", "PTS"),
        ("assist", "AST"), ("assists", "AST"),
        ("rebound", "REB"), ("rebounds", "REB"),
        ("steal", "STL"), ("steals", "STL"),
        ("block", "BLK"), ("blocks", "BLK"),
        ("turnover", "TOV"), ("turnovers", "TOV"),
        ("minute", "MIN"), ("minutes", "MIN"),
    )
)


def collapse_entity(name: str) -> str:
    """Canonical single-token form of an entity name: lowercase, underscore-joined."""
    collapsed = "_".join(name.lower().replace("_", " ").split())
    if not collapsed:
        raise DataprepError(f"empty entity name {name!r}")
    return collapsed


@dataclass(frozen=True)
class ScoreTable:
    """Box-score rows (entity, field, value) plus the entity lexicon that covers them.

    Row entities use the collapsed form; the lexicon may hold display forms.
    """

    rows: tuple[tuple[str, str, str], ...]
    lexicon: tuple[str, ...]

    def __post_init__(self) -> None:
        covered = {collapse_entity(e) for e in self.lexicon}
        seen: set[tuple[str, str]] = set()
        for entity, fld, value in self.rows:
            if (entity, fld) in seen:
                raise DataprepError(f"duplicate row ({entity!r}, {fld!r})")
            seen.add((entity, fld))
            if entity not in covered:
                raise DataprepError(f"row entity {entity!r} not covered by the lexicon")
            if not fld or not value:
                raise DataprepError(f"bad row ({entity!r}, {fld!r}, {value!r})")


def load_score_table(path: str | Path) -> ScoreTable:
    """Read line-delimited {entity, field, value} rows; the lexicon is derived from entities.

    Entities may be written in display form ('LeBron James'); rows store the
    collapsed form so they match normalized sentences.
    """
    rows: list[tuple[str, str, str]] = []
    lexicon: dict[str, None] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                entity = str(obj["entity"])
                rows.append((collapse_entity(entity), str(obj["field"]), str(obj["value"])))
                lexicon.setdefault(entity)
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataprepError(f"{path}: line {lineno}: bad row ({exc})") from None
    return ScoreTable(rows=tuple(rows), lexicon=tuple(lexicon))


def load_filter_rules(path: str | Path) -> tuple[FilterRule, ...]:
    rules: list[FilterRule] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                rules.append(
                    FilterRule(
                        trigger=str(obj["trigger"]),
                        fields=tuple(str(f) for f in obj["fields"]),
                        window=int(obj.get("window", 3)),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataprepError(f"{path}: line {lineno}: bad rule ({exc})") from None
    return tuple(rules)


def _find_numbers(sentence: Sequence[str]) -> list[tuple[int, int, int]]:
    """Greedy left-to-right number spans as (position, value, span length)."""
    found: list[tuple[int, int, int]] = []
    i = 0
    while i < len(sentence):
        parsed = words_to_number(sentence[i:])
        if parsed is not None:
            found.append((i, parsed[0], parsed[1]))
            i += parsed[1]
        else:
            i += 1
    return found


def align_records(
    sentence: Sequence[str],
    table: ScoreTable,
    rules: Sequence[FilterRule] = DEFAULT_FILTER_RULES,
    name_field: str = "PLAYER",
) -> Record:
    """Build the record a sentence realizes: entity names plus one table row per
    enumerated number.

    Each number belongs to its nearest entity mention.  When trigger keywords
    fire within their window, the nearest trigger restricts the admissible
    fields; otherwise the first matching unclaimed row in table order wins.
    Fields for the second, third, ... mentioned entity get a _2, _3 suffix so
    the record keeps unique fields.  The sentence should already be entity
    normalized; collapsed mentions still match.
    """
    if not sentence:
        raise DataprepError("cannot align an empty sentence")
    mentions = find_entities(sentence, table.lexicon)
    numbers = _find_numbers(sentence)

    entities: list[str] = []
    for _, tok in mentions:
        if tok not in entities:
            entities.append(tok)

    claimed: set[tuple[str, str]] = set()
    stats: dict[str, list[tuple[str, str]]] = {e: [] for e in entities}
    for pos, value, span in numbers:
        lo, hi = pos, pos + span - 1
        if not mentions:
            break
        owner = min(mentions, key=lambda m: max(lo - m[0], m[0] - hi, 0))[1]

        # fields allowed by the nearest fired trigger; None means unrestricted
        allowed: set[str] | None = None
        best_gap: int | None = None
        for rule in rules:
            for q in range(max(0, lo - rule.window), min(len(sentence), hi + rule.window + 1)):
                if sentence[q] != rule.trigger:
                    continue
                gap = max(lo - q, q - hi, 0)
                if best_gap is None or gap < best_gap:
                    best_gap, allowed = gap, set(rule.fields)
                elif gap == best_gap:
                    allowed.update(rule.fields)

        for row_entity, row_field, row_value in table.rows:
            if row_entity != owner or row_value != str(value):
                continue
            if allowed is not None and row_field not in allowed:
                continue
            if (owner, row_field) in claimed:
                continue
            claimed.add((owner, row_field))
            stats[owner].append((row_field, row_value))
            break

    entries: list[tuple[str, str]] = []
    for rank, entity in enumerate(entities):
        suffix = "" if rank == 0 else f"_{rank + 1}"
        entries.append((name_field + suffix, entity))
        entries.extend((fld + suffix, val) for fld, val in stats[entity])

    try:
        return Record(tuple(entries))
    except CorpusError as exc:
        raise DataprepError(f"alignment produced no usable record: {exc}") from None
