"""Data model, tokenization, vocabulary, corpus files, and the synthetic corpus generator."""

from __future__ import annotations

import json
import random
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
UNK = "<unk>"
MASK = "<M>"
RESERVED_TOKENS = (PAD, BOS, EOS, UNK, MASK)
PAD_ID, BOS_ID, EOS_ID, UNK_ID, MASK_ID = range(5)

# Records bigger than this are almost certainly an alignment bug upstream.
MAX_RECORD_ENTRIES = 12

_TERMINAL_PUNCT = ".,!?"


class CorpusError(ValueError):
    """Malformed record, pair, vocabulary, or corpus file."""


@dataclass(frozen=True)
class Record:
    """Ordered (field, value) pairs with unique fields and whitespace-free values."""

    entries: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.entries) <= MAX_RECORD_ENTRIES:
            raise CorpusError(
                f"record must have 1..{MAX_RECORD_ENTRIES} entries, got {len(self.entries)}"
            )
        seen: set[str] = set()
        for fld, val in self.entries:
            if not fld or any(ch.isspace() for ch in fld):
                raise CorpusError(f"bad field name {fld!r}")
            if fld in seen:
                raise CorpusError(f"duplicate field {fld!r}")
            seen.add(fld)
            if not val or any(ch.isspace() for ch in val):
                raise CorpusError(f"field {fld!r} has empty or whitespace value {val!r}")
        # cached views; retrieval hammers field_set over whole pools
        object.__setattr__(self, "_fields", tuple(f for f, _ in self.entries))
        object.__setattr__(self, "_values", tuple(v for _, v in self.entries))
        object.__setattr__(self, "_field_set", frozenset(seen))

    def __len__(self) -> int:
        return len(self.entries)

    def fields(self) -> tuple[str, ...]:
        return self._fields

    def values(self) -> tuple[str, ...]:
        return self._values

    def field_set(self) -> frozenset[str]:
        return self._field_set

    def value(self, fld: str) -> str | None:
        for f, v in self.entries:
            if f == fld:
                return v
        return None


@dataclass(frozen=True)
class CorpusPair:
    """A record paired with one tokenized reference sentence."""

    record: Record
    text: tuple[str, ...]
    id: str

    def __post_init__(self) -> None:
        if not self.text:
            raise CorpusError(f"pair {self.id!r} has empty text")
        for tok in self.text:
            if not tok or any(ch.isspace() for ch in tok):
                raise CorpusError(f"pair {self.id!r} has bad token {tok!r}")
        if not self.id:
            raise CorpusError("pair id must be non-empty")


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, split on whitespace, and split trailing .,!? into their own tokens."""
    tokens: list[str] = []
    for chunk in text.lower().split():
        tail: list[str] = []
        while len(chunk) > 1 and chunk[-1] in _TERMINAL_PUNCT:
            tail.append(chunk[-1])
            chunk = chunk[:-1]
        tokens.append(chunk)
        tokens.extend(reversed(tail))
    return tuple(tokens)


# Multi-token boolean-ish values that turn into a single fluent token.
DEFAULT_VALUE_PHRASES: dict[tuple[str, str], str] = {
    ("familyfriendly", "yes"): "family_friendly",
    ("familyfriendly", "no"): "not_family_friendly",
}


def normalize_value(
    fld: str,
    raw: str,
    phrases: dict[tuple[str, str], str] | None = None,
) -> str:
    """Collapse a raw field value to one lowercase underscore-joined token."""
    if phrases is None:
        phrases = DEFAULT_VALUE_PHRASES
    raw = raw.strip().lower()
    if not raw:
        raise CorpusError(f"empty value for field {fld!r}")
    mapped = phrases.get((fld.lower(), raw))
    if mapped is not None:
        return mapped
    return "_".join(raw.split())


class Vocabulary:
    """Bijective token<->id map with reserved ids 0..4 for pad/bos/eos/unk/mask."""

    def __init__(self, tokens: Iterable[str]):
        self._id_to_token: list[str] = list(RESERVED_TOKENS)
        self._token_to_id: dict[str, int] = {t: i for i, t in enumerate(RESERVED_TOKENS)}
        for tok in tokens:
            if tok in self._token_to_id:
                raise CorpusError(f"duplicate or reserved token {tok!r}")
            self._token_to_id[tok] = len(self._id_to_token)
            self._id_to_token.append(tok)

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def get(self, token: str) -> int | None:
        """Strict lookup: None when the token is out of vocabulary."""
        return self._token_to_id.get(token)

    def lookup(self, token: str) -> int:
        """Embedding lookup: out-of-vocabulary tokens fall back to the UNK id."""
        return self._token_to_id.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        if not 0 <= idx < len(self._id_to_token):
            raise CorpusError(f"token id {idx} out of range")
        return self._id_to_token[idx]

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self._id_to_token)

    def content_hash(self) -> str:
        import hashlib

        payload = "\n".join(self._id_to_token).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocabulary(corpus: Sequence[CorpusPair], min_count: int = 1) -> Vocabulary:
    """Count tokens over texts, field names, and values; keep those seen >= min_count.

    Ids are assigned by descending frequency, ties broken lexicographically, so the
    same corpus always yields the same vocabulary.
    """
    if not corpus:
        raise CorpusError("cannot build a vocabulary from an empty corpus")
    if min_count < 1:
        raise CorpusError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for pair in corpus:
        counts.update(pair.text)
        for fld, val in pair.record.entries:
            counts[fld] += 1
            counts[val] += 1
    kept = sorted(
        (tok for tok, n in counts.items() if n >= min_count and tok not in RESERVED_TOKENS),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(kept)


def load_corpus(path: str | Path) -> list[CorpusPair]:
    """Read line-delimited {id, record, text} objects; values are normalized on load."""
    pairs: list[CorpusPair] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: line {lineno}: invalid JSON ({exc})") from None
            try:
                entries = tuple(
                    (str(e["field"]), normalize_value(str(e["field"]), str(e["value"])))
                    for e in obj["record"]
                )
                pair = CorpusPair(
                    record=Record(entries),
                    text=tokenize(str(obj["text"])),
                    id=str(obj["id"]),
                )
            except (KeyError, TypeError) as exc:
                raise CorpusError(f"{path}: line {lineno}: missing or bad key ({exc})") from None
            except CorpusError as exc:
                raise CorpusError(f"{path}: line {lineno}: {exc}") from None
            pairs.append(pair)
    return pairs


def save_corpus(pairs: Sequence[CorpusPair], path: str | Path) -> None:
    """Write the canonical line-delimited form read back by load_corpus."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            obj = {
                "id": p.id,
                "record": [{"field": f, "value": v} for f, v in p.record.entries],
                "text": " ".join(p.text),
            }
            fh.write(json.dumps(obj, ensure_ascii=False, separators=(", ", ": ")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Synthetic corpus
#
# Restaurant-flavoured records rendered through a handful of sentence patterns.
# Value tokens are pairwise disjoint across fields and disjoint from every
# pattern word, so each record value appears in the text exactly once and the
# content/style split is unambiguous by construction.

_SYNTH_FIELDS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("name", (
        "the_copper_kettle", "marble_arch_cafe", "blue_lagoon_diner", "old_mill_house",
        "sunset_grill", "king_fisher_inn", "velvet_olive", "harbour_lights",
    )),
    ("eattype", ("pub", "bistro", "coffee_shop", "restaurant", "wine_bar")),
    ("food", ("italian", "japanese", "french", "indian", "mexican", "greek")),
    ("pricerange", ("cheap", "moderate", "expensive", "£20-25", "less_than_£20", "more_than_£30")),
    ("rating", ("1_out_of_5", "2_out_of_5", "3_out_of_5", "4_out_of_5", "5_out_of_5")),
    ("area", ("riverside", "city_centre", "old_town", "harbour_district")),
    ("familyfriendly", ("family_friendly", "not_family_friendly")),
    ("near", ("the_corn_mill", "raja_palace", "cafe_sol", "the_blue_anchor", "station_road_market")),
)

_SYNTH_PATTERNS: tuple[tuple[tuple[str, str], ...], ...] = (
    (
        ("name", "{v}"), ("eattype", "is a {v}"), ("food", "serving {v} food"),
        ("pricerange", "with {v} prices"), ("rating", "rated {v}"),
        ("area", "in the {v} area"), ("near", "close to {v}"), ("familyfriendly", "and {v}"),
    ),
    (
        ("name", "come try {v}"), ("familyfriendly", "a {v} spot"), ("eattype", "of the {v} kind"),
        ("food", "offering {v} dishes"), ("pricerange", "at {v} prices"),
        ("rating", "holding a {v} rating"), ("area", "over in {v}"), ("near", "beside {v}"),
    ),
    (
        ("food", "looking for {v} food ?"), ("name", "{v} could be the answer"),
        ("eattype", "this {v}"), ("pricerange", "charges {v}"), ("rating", "earns {v} stars"),
        ("area", "sits in {v}"), ("near", "right by {v}"), ("familyfriendly", "and counts as {v}"),
    ),
    (
        ("area", "along the {v}"), ("near", "close by {v}"), ("eattype", "there is a {v}"),
        ("food", "doing {v} cooking"), ("name", "called {v}"),
        ("pricerange", "where prices are {v}"), ("rating", "customers give it {v}"),
        ("familyfriendly", "the place is {v}"),
    ),
    (
        ("name", "reviewers describe {v}"), ("eattype", "as a {v}"), ("food", "with {v} cooking"),
        ("rating", "scoring {v} overall"), ("pricerange", "costs sit around {v}"),
        ("near", "a short walk from {v}"), ("area", "in {v}"), ("familyfriendly", "it is {v}"),
    ),
    (
        ("name", "{v} :"), ("food", "{v} menu"), ("eattype", "{v} setting"),
        ("pricerange", "{v} pricing"), ("rating", "{v} score"), ("area", "{v} location"),
        ("near", "by {v}"), ("familyfriendly", "{v} overall"),
    ),
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Field inventory, sentence patterns, and sampling knobs for generate_synthetic."""

    fields: tuple[tuple[str, tuple[str, ...]], ...] = _SYNTH_FIELDS
    patterns: tuple[tuple[tuple[str, str], ...], ...] = _SYNTH_PATTERNS
    min_fields: int = 3
    max_fields: int = 8
    num_pairs: int = 2000
    seed: int = 7
    anchor_field: str = "name"

    def __post_init__(self) -> None:
        names = [f for f, _ in self.fields]
        if len(set(names)) != len(names):
            raise CorpusError("duplicate field in synthetic inventory")
        if self.anchor_field not in names:
            raise CorpusError(f"anchor field {self.anchor_field!r} not in the inventory")
        for fld, vals in self.fields:
            if not vals:
                raise CorpusError(f"field {fld!r} has an empty value set")
        all_values = [v for _, vals in self.fields for v in vals]
        if len(set(all_values)) != len(all_values):
            raise CorpusError("value sets must be pairwise disjoint")
        pattern_words = {
            w for pat in self.patterns for _, frag in pat
            for w in frag.replace("{v}", " ").split()
        }
        clash = pattern_words & set(all_values)
        if clash:
            raise CorpusError(f"pattern words collide with values: {sorted(clash)}")
        for pat in self.patterns:
            slots = [f for f, _ in pat]
            if sorted(slots) != sorted(names):
                raise CorpusError("every pattern must cover every inventory field exactly once")
            for _, frag in pat:
                if frag.count("{v}") != 1:
                    raise CorpusError(f"fragment {frag!r} must contain one {{v}} slot")
        if not 1 <= self.min_fields <= self.max_fields <= len(names):
            raise CorpusError("need 1 <= min_fields <= max_fields <= number of fields")
        if self.num_pairs < 1:
            raise CorpusError("num_pairs must be >= 1")


def tiny_synthetic_spec(num_pairs: int = 30, seed: int = 0) -> SyntheticSpec:
    """Three-field variant whose whole vocabulary stays under 50 tokens.

    Small enough for finite-difference checks to run in seconds.
    """
    keep = {
        "name": ("the_copper_kettle", "sunset_grill", "velvet_olive"),
        "food": ("italian", "greek"),
        "rating": ("3_out_of_5", "5_out_of_5"),
    }
    fields = tuple((f, keep[f]) for f, _ in _SYNTH_FIELDS if f in keep)
    patterns = tuple(
        tuple((f, frag) for f, frag in pat if f in keep)
        for pat in (_SYNTH_PATTERNS[0], _SYNTH_PATTERNS[3], _SYNTH_PATTERNS[5])
    )
    return SyntheticSpec(
        fields=fields,
        patterns=patterns,
        min_fields=2,
        max_fields=3,
        num_pairs=num_pairs,
        seed=seed,
    )


def generate_synthetic(spec: SyntheticSpec | None = None) -> list[CorpusPair]:
    """Sample num_pairs records and render each through one sentence pattern."""
    if spec is None:
        spec = SyntheticSpec()
    rng = random.Random(spec.seed)
    inventory = dict(spec.fields)
    order = [f for f, _ in spec.fields]
    others = [f for f in order if f != spec.anchor_field]
    pairs: list[CorpusPair] = []
    for i in range(spec.num_pairs):
        k = rng.randint(spec.min_fields, spec.max_fields)
        chosen_others = set(rng.sample(others, k - 1))
        chosen = [f for f in order if f == spec.anchor_field or f in chosen_others]
        values = {f: rng.choice(inventory[f]) for f in chosen}
        pattern = spec.patterns[rng.randrange(len(spec.patterns))]
        tokens: list[str] = []
        for fld, frag in pattern:
            if fld in values:
                tokens.extend(frag.replace("{v}", values[fld]).split())
        tokens.append(".")
        counts = Counter(tokens)
        assert all(counts[v] == 1 for v in values.values()), "value must appear exactly once"
        pairs.append(
            CorpusPair(
                record=Record(tuple((f, values[f]) for f in chosen)),
                text=tuple(tokens),
                id=f"syn-{i:06d}",
            )
        )
    return pairs
