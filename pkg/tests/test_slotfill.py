"""Slot-filling baseline: template extraction, refilling, masked-BLEU identity."""

from recstyle.corpus import Record
from recstyle.dataprep import FilterRule
from recstyle.metrics import ContentLexicon, m_bleu
from recstyle.slotfill import Slot, extract_template, fill_template, slot_fill
from recstyle.training import build_triples


def test_extract_template_marks_value_tokens():
    x_e = Record((("name", "alpha"), ("food", "thai")))
    y_e = ("alpha", "serves", "thai", "food", ".")
    template = extract_template(x_e, y_e)
    assert template.items == (
        Slot("name", "alpha"), "serves", Slot("food", "thai"), "food", ".",
    )
    assert template.slots() == (Slot("name", "alpha"), Slot("food", "thai"))


def test_fill_template_replaces_and_keeps_stale():
    x_e = Record((("name", "alpha"), ("food", "thai")))
    y_e = ("alpha", "serves", "thai", ".")
    template = extract_template(x_e, y_e)
    x_full = Record((("name", "beta"), ("food", "greek")))
    assert fill_template(template, x_full) == ("beta", "serves", "greek", ".")
    x_partial = Record((("name", "beta"), ("area", "riverside")))
    # food missing from x: the stale exemplar value stays in place
    assert fill_template(template, x_partial) == ("beta", "serves", "thai", ".")


def test_fill_with_own_record_reproduces_exemplar():
    x_e = Record((("name", "alpha"), ("rating", "5_out_of_5")))
    y_e = ("alpha", "holds", "5_out_of_5", "stars", ".")
    assert slot_fill(x_e, x_e, y_e) == y_e


def test_duplicate_values_disambiguated_by_rules():
    x_e = Record((("PTS", "12"), ("AST", "12")))
    y_e = ("he", "had", "12", "points", "and", "12", "assists", ".")
    template = extract_template(x_e, y_e)
    slots = [item for item in template.items if isinstance(item, Slot)]
    assert [s.field for s in slots] == ["PTS", "AST"]
    x = Record((("PTS", "30"), ("AST", "7")))
    assert fill_template(template, x) == ("he", "had", "30", "points", "and", "7", "assists", ".")


def test_duplicate_values_fall_back_to_record_order():
    x_e = Record((("f_one", "z"), ("f_two", "z")))
    y_e = ("z", "then", "z")
    template = extract_template(x_e, y_e, rules=())
    slots = template.slots()
    assert [s.field for s in slots] == ["f_one", "f_one"]


def test_custom_rule_window_bounds_trigger_search():
    x_e = Record((("PTS", "9"), ("AST", "9")))
    rules = (FilterRule("assists", ("AST",), window=1),)
    y_e = ("9", "assists", "for", "him", "plus", "9", "more")
    template = extract_template(x_e, y_e, rules)
    fields = [s.field for s in template.slots()]
    # the trigger sits next to the first 9 only; the second falls back to order
    assert fields == ["AST", "PTS"]


def test_slot_fill_scores_masked_bleu_identity(tiny_corpus):
    triples = build_triples(tiny_corpus, tiny_corpus, max_distance=2, seed="sf")
    lexicon = ContentLexicon.from_pairs(tiny_corpus)
    cands = [slot_fill(t.x, t.x_e, t.y_e) for t in triples]
    refs = [t.y_e for t in triples]
    assert m_bleu(cands, refs, lexicon) == 100.0
