"""Slot-filling baseline: templates cut from an exemplar, refilled from a record.

Only tokens that literally equal one of the exemplar record's values become
slots, so filling a template with its own record reproduces the exemplar
exactly.  Slots whose field is missing from the new record keep the stale
original token: the output stays fluent (and masks identically), at the cost
of asserting content the record never had.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

from .corpus import Record
from .dataprep import DEFAULT_FILTER_RULES, FilterRule


@dataclass(frozen=True)
class Slot:
    field: str
    original: str


@dataclass(frozen=True)
class Template:
    """Exemplar tokens with value positions replaced by typed slots."""

    items: tuple[str | Slot, ...]

    def slots(self) -> tuple[Slot, ...]:
        return tuple(item for item in self.items if isinstance(item, Slot))


def extract_template(
    x_e: Record,
    y_e: Sequence[str],
    rules: Sequence[FilterRule] = DEFAULT_FILTER_RULES,
) -> Template:
    """Map each value occurrence in y_e to its field.

    When one token could belong to several fields (duplicate values), the
    nearest trigger keyword within a rule's window picks the field; otherwise
    record order wins.
    """
    value_fields: dict[str, list[str]] = {}
    for fld, val in x_e.entries:
        value_fields.setdefault(val, []).append(fld)
    items: list[str | Slot] = []
    for pos, tok in enumerate(y_e):
        cands = value_fields.get(tok)
        if not cands:
            items.append(tok)
            continue
        fld = cands[0]
        if len(cands) > 1:
            trigger_gap: dict[str, int] = {}
            for rule in rules:
                lo = max(0, pos - rule.window)
                hi = min(len(y_e), pos + rule.window + 1)
                for q in range(lo, hi):
                    if y_e[q] != rule.trigger:
                        continue
                    gap = abs(q - pos)
                    for f in rule.fields:
                        if gap < trigger_gap.get(f, rule.window + 1):
                            trigger_gap[f] = gap
            narrowed = [f for f in cands if f in trigger_gap]
            if narrowed:
                fld = min(narrowed, key=lambda f: (trigger_gap[f], cands.index(f)))
        items.append(Slot(fld, tok))
    return Template(tuple(items))


def fill_template(template: Template, x: Record) -> tuple[str, ...]:
    """Substitute x's values into the slots; absent fields keep the original token."""
    out: list[str] = []
    for item in template.items:
        if isinstance(item, Slot):
            val = x.value(item.field)
            out.append(val if val is not None else item.original)
        else:
            out.append(item)
    return tuple(out)


def slot_fill(
    x: Record,
    x_e: Record,
    y_e: Sequence[str],
    rules: Sequence[FilterRule] = DEFAULT_FILTER_RULES,
) -> tuple[str, ...]:
    return fill_template(extract_template(x_e, y_e, rules), x)
