"""Alignment pipeline: number words, entity mentions, rule-filtered records."""

import pytest

from recstyle.corpus import Record
from recstyle.dataprep import (
    DEFAULT_FILTER_RULES,
    DataprepError,
    FilterRule,
    ScoreTable,
    align_records,
    find_entities,
    load_filter_rules,
    load_score_table,
    normalize_entities,
    words_to_number,
)

UNITS = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine"]
TEENS = [
    "ten", "eleven", "twelve", "thirteen", "fourteen",
    "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
]
TENS = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]


def render_cardinal(n):
    """Independent English renderer used as the parsing oracle."""
    if n < 10:
        return UNITS[n]
    if n < 20:
        return TEENS[n - 10]
    if n < 100:
        tens, unit = divmod(n, 10)
        word = TENS[tens - 2]
        return word if unit == 0 else f"{word}-{UNITS[unit]}"
    hundreds, rest = divmod(n, 100)
    head = f"{UNITS[hundreds]} hundred"
    return head if rest == 0 else f"{head} and {render_cardinal(rest)}"


# --- words_to_number ------------------------------------------------------------

def test_words_to_number_round_trips_sampled_cardinals():
    for n in list(range(0, 130)) + [200, 305, 310, 345, 400, 999]:
        tokens = tuple(render_cardinal(n).split())
        assert words_to_number(tokens) == (n, len(tokens)), n


def test_words_to_number_digits_and_misses():
    assert words_to_number(("37", "points")) == (37, 1)
    assert words_to_number(("points",)) is None
    assert words_to_number(()) is None
    assert words_to_number(("hundred",)) is None


def test_words_to_number_consumption_boundaries():
    # a dangling 'and' stays unconsumed when no remainder follows
    assert words_to_number(("one", "hundred", "and", "rebounds")) == (100, 2)
    assert words_to_number(("two", "hundred", "five")) == (205, 3)
    assert words_to_number(("twenty", "two")) == (22, 2)
    assert words_to_number(("twenty", "points")) == (20, 1)
    assert words_to_number(("twenty-two",)) == (22, 1)
    # greedy: 'six hundred' wins over bare 'six'
    assert words_to_number(("six", "hundred", "and", "forty", "four")) == (644, 5)


# --- entity mentions --------------------------------------------------------------

LEXICON = ("LeBron James", "James Harden", "Chris Paul")


def test_find_entities_prefers_longest_match():
    sent = ("lebron", "james", "and", "james", "harden", "scored")
    assert find_entities(sent, LEXICON) == [(0, "lebron_james"), (2, "james_harden")]


def test_normalize_entities_collapses_mentions():
    sent = ("chris", "paul", "fed", "lebron", "james")
    assert normalize_entities(sent, LEXICON) == ("chris_paul", "fed", "lebron_james")
    # collapsed forms keep matching once normalized
    assert find_entities(normalize_entities(sent, LEXICON), LEXICON) == [
        (0, "chris_paul"), (2, "lebron_james"),
    ]


def test_filter_rule_validation():
    with pytest.raises(DataprepError):
        FilterRule("two words", ("PTS",))
    with pytest.raises(DataprepError):
        FilterRule("points", ())
    with pytest.raises(DataprepError):
        FilterRule("points", ("PTS",), window=-1)


# --- score tables -------------------------------------------------------------------

def make_table():
    rows = (
        ("lebron_james", "PTS", "32"),
        ("lebron_james", "AST", "9"),
        ("lebron_james", "REB", "9"),
        ("james_harden", "PTS", "9"),
    )
    return ScoreTable(rows=rows, lexicon=("LeBron James", "James Harden"))


def test_score_table_validation():
    with pytest.raises(DataprepError, match="duplicate row"):
        ScoreTable(rows=(("a_b", "PTS", "1"), ("a_b", "PTS", "2")), lexicon=("A B",))
    with pytest.raises(DataprepError, match="not covered"):
        ScoreTable(rows=(("nobody", "PTS", "1"),), lexicon=("A B",))


def test_load_score_table_round_trip(tmp_path):
    path = tmp_path / "table.jsonl"
    path.write_text(
        '{"entity": "lebron_james", "field": "PTS", "value": "32"}\n'
        '{"entity": "james_harden", "field": "PTS", "value": "9"}\n'
    )
    table = load_score_table(path)
    assert table.rows[0] == ("lebron_james", "PTS", "32")
    assert table.lexicon == ("lebron_james", "james_harden")
    path.write_text('{"entity": "x"}\n')
    with pytest.raises(DataprepError, match="line 1"):
        load_score_table(path)


def test_load_filter_rules(tmp_path):
    path = tmp_path / "rules.jsonl"
    path.write_text(
        '{"trigger": "dimes", "fields": ["AST"], "window": 2}\n'
        '{"trigger": "boards", "fields": ["REB"]}\n'
    )
    rules = load_filter_rules(path)
    assert rules == (FilterRule("dimes", ("AST",), 2), FilterRule("boards", ("REB",), 3))


# --- alignment --------------------------------------------------------------------------

def test_align_records_basic_sentence():
    sent = ("lebron_james", "scored", "thirty-two", "points", "and", "nine", "assists", ".")
    record = align_records(sent, make_table())
    assert record.entries == (
        ("PLAYER", "lebron_james"), ("PTS", "32"), ("AST", "9"),
    )


def test_align_records_rules_block_wrong_fields():
    # nine appears near 'points' only: harden's PTS row matches, lebron's AST does not
    sent = ("james_harden", "added", "nine", "points", ".")
    record = align_records(sent, make_table())
    assert record.entries == (("PLAYER", "james_harden"), ("PTS", "9"))


def test_align_records_without_trigger_claims_first_match():
    # no trigger near the number: every field stays admissible, AST comes first
    sent = ("lebron_james", "finished", "with", "nine", ".")
    record = align_records(sent, make_table())
    assert record.entries == (("PLAYER", "lebron_james"), ("AST", "9"))


def test_align_records_suffixes_second_entity():
    sent = (
        "lebron_james", "had", "thirty-two", "points", "while",
        "james_harden", "managed", "nine", "points", ".",
    )
    record = align_records(sent, make_table())
    assert record.entries == (
        ("PLAYER", "lebron_james"), ("PTS", "32"),
        ("PLAYER_2", "james_harden"), ("PTS_2", "9"),
    )


def test_align_records_needs_some_entity():
    with pytest.raises(DataprepError):
        align_records((), make_table())
    with pytest.raises(DataprepError):
        align_records(("nobody", "scored"), make_table())


def test_align_matches_multiword_mentions_inline():
    sent = ("lebron", "james", "scored", "thirty-two", "points")
    record = align_records(sent, make_table())
    assert record.value("PLAYER") == "lebron_james"
    assert record.value("PTS") == "32"
