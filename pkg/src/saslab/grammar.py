"""Synthetic dependency-annotated grammar.

Sentences are drawn from weighted templates over part-of-speech slots; each
template fixes the dependency arcs, so every generated sentence ships with a
gold parse. Number agreement (subject-verb, determiner-noun, reflexive-
antecedent) gives the grammar enough structure for an MLM to exploit, and
single-token corruption of exactly one agreement rule yields minimal pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, CLS, SEP, MASK = 0, 1, 2, 3
SPECIALS = {"[PAD]": PAD, "[CLS]": CLS, "[SEP]": SEP, "[MASK]": MASK}
NUM_SPECIALS = 4

CATEGORIES = ("det", "adj", "noun", "verb", "poss", "adv", "refl")
RELATIONS = ("det", "amod", "nsubj", "dobj", "poss", "advmod")
NUMBERED = ("det", "noun", "verb", "refl")  # categories carrying sg/pl
ROOT = -1

PHENOMENA = ("subject-verb", "determiner-noun", "reflexive")


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Vocabulary:
    words: tuple[str, ...]            # index == token id (specials first)
    category: dict[int, str]          # word id -> category
    number: dict[int, str]            # 'sg' | 'pl' for numbered categories
    counterpart: dict[int, int]       # same lexeme, opposite number

    @property
    def size(self) -> int:
        return len(self.words)

    def is_special(self, wid: int) -> bool:
        return wid < NUM_SPECIALS

    def ids(self, category: str, number: str | None = None) -> list[int]:
        out = [w for w, c in self.category.items() if c == category]
        if number is not None:
            out = [w for w in out if self.number.get(w) == number]
        return sorted(out)

    def word_ids(self) -> list[int]:
        return list(range(NUM_SPECIALS, self.size))


@dataclass(frozen=True)
class CorpusConfig:
    nouns: int = 50
    verbs: int = 50
    adjectives: int = 30
    determiners: int = 6
    possessives: int = 6
    adverbs: int = 8
    reflexives: int = 2
    min_len: int = 4
    max_len: int = 12
    template_weights: tuple[float, ...] | None = None  # None -> uniform
    size: int = 50_000
    seed: int = 0

    def validate(self) -> None:
        for name in ("nouns", "verbs", "determiners", "reflexives"):
            n = getattr(self, name)
            if n <= 0 or n % 2:
                raise GrammarError(f"{name} must be positive and even (sg/pl pairs), got {n}")
        for name in ("adjectives", "possessives", "adverbs"):
            if getattr(self, name) <= 0:
                raise GrammarError(f"{name} must be positive")
        if not (0 < self.min_len <= self.max_len):
            raise GrammarError("bad sentence length bounds")
        if self.template_weights is not None:
            w = np.asarray(self.template_weights, dtype=float)
            if len(w) != len(TEMPLATES) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise GrammarError("template weights must be nonnegative and sum to 1")


@dataclass
class ParsedSentence:
    tokens: list[int]
    parent: list[int]              # head index per token; ROOT at the main verb
    relation: list[str | None]     # None at the root

    def arcs(self) -> list[tuple[int, int, str]]:
        """(child, parent, relation) for every non-root token."""
        return [
            (i, p, r)
            for i, (p, r) in enumerate(zip(self.parent, self.relation))
            if p != ROOT
        ]

    def dependents(self, i: int) -> list[int]:
        return [j for j, p in enumerate(self.parent) if p == i]


@dataclass
class MinimalPair:
    acceptable: ParsedSentence
    unacceptable: list[int]
    phenomenon: str
    corrupt_index: int


# A template slot is (category, group): group ties numbered slots together
# ('subj', 'obj') or leaves them free (None). Arcs are (child, parent, rel).
@dataclass(frozen=True)
class Template:
    name: str
    slots: tuple[tuple[str, str | None], ...]
    arcs: tuple[tuple[int, int, str], ...]
    root: int

    def signature(self) -> tuple[str, ...]:
        return tuple(c for c, _ in self.slots)


def _t(name, slots, arcs, root):
    return Template(name, tuple(slots), tuple(arcs), root)


TEMPLATES: tuple[Template, ...] = (
    _t("dnv-a", [("det", "subj"), ("noun", "subj"), ("verb", "subj"), ("adv", None)],
       [(0, 1, "det"), (1, 2, "nsubj"), (3, 2, "advmod")], 2),
    _t("dnv-r", [("det", "subj"), ("noun", "subj"), ("verb", "subj"), ("refl", "subj")],
       [(0, 1, "det"), (1, 2, "nsubj"), (3, 2, "dobj")], 2),
    _t("dnv-dn", [("det", "subj"), ("noun", "subj"), ("verb", "subj"), ("det", "obj"), ("noun", "obj")],
       [(0, 1, "det"), (1, 2, "nsubj"), (3, 4, "det"), (4, 2, "dobj")], 2),
    _t("pnv-dn", [("poss", None), ("noun", "subj"), ("verb", "subj"), ("det", "obj"), ("noun", "obj")],
       [(0, 1, "poss"), (1, 2, "nsubj"), (3, 4, "det"), (4, 2, "dobj")], 2),
    _t("danv-dn", [("det", "subj"), ("adj", None), ("noun", "subj"), ("verb", "subj"),
                   ("det", "obj"), ("noun", "obj")],
       [(0, 2, "det"), (1, 2, "amod"), (2, 3, "nsubj"), (4, 5, "det"), (5, 3, "dobj")], 3),
    _t("dnv-dan", [("det", "subj"), ("noun", "subj"), ("verb", "subj"),
                   ("det", "obj"), ("adj", None), ("noun", "obj")],
       [(0, 1, "det"), (1, 2, "nsubj"), (3, 5, "det"), (4, 5, "amod"), (5, 2, "dobj")], 2),
    _t("panv-ra", [("poss", None), ("adj", None), ("noun", "subj"), ("verb", "subj"),
                   ("refl", "subj"), ("adv", None)],
       [(0, 2, "poss"), (1, 2, "amod"), (2, 3, "nsubj"), (4, 3, "dobj"), (5, 3, "advmod")], 3),
    _t("danav-dan", [("det", "subj"), ("adj", None), ("noun", "subj"), ("adv", None), ("verb", "subj"),
                     ("det", "obj"), ("adj", None), ("noun", "obj")],
       [(0, 2, "det"), (1, 2, "amod"), (2, 4, "nsubj"), (3, 4, "advmod"),
        (5, 7, "det"), (6, 7, "amod"), (7, 4, "dobj")], 4),
    _t("daanv-pan-a", [("det", "subj"), ("adj", None), ("adj", None), ("noun", "subj"), ("verb", "subj"),
                       ("poss", None), ("adj", None), ("noun", "obj"), ("adv", None)],
       [(0, 3, "det"), (1, 3, "amod"), (2, 3, "amod"), (3, 4, "nsubj"),
        (5, 7, "poss"), (6, 7, "amod"), (7, 4, "dobj"), (8, 4, "advmod")], 4),
    _t("daanav-daan-a", [("det", "subj"), ("adj", None), ("adj", None), ("noun", "subj"), ("adv", None),
                         ("verb", "subj"), ("det", "obj"), ("adj", None), ("adj", None), ("noun", "obj"),
                         ("adv", None)],
       [(0, 3, "det"), (1, 3, "amod"), (2, 3, "amod"), (3, 5, "nsubj"), (4, 5, "advmod"),
        (6, 9, "det"), (7, 9, "amod"), (8, 9, "amod"), (9, 5, "dobj"), (10, 5, "advmod")], 5),
)


def build_vocabulary(config: CorpusConfig) -> Vocabulary:
    """Deterministic id assignment: specials, then categories in fixed order,
    numbered categories interleaved as (sg, pl) lexeme pairs."""
    config.validate()
    words: list[str] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]"]
    category: dict[int, str] = {}
    number: dict[int, str] = {}
    counterpart: dict[int, int] = {}
    counts = {
        "det": config.determiners,
        "adj": config.adjectives,
        "noun": config.nouns,
        "verb": config.verbs,
        "poss": config.possessives,
        "adv": config.adverbs,
        "refl": config.reflexives,
    }
    for cat in CATEGORIES:
        n = counts[cat]
        if cat in NUMBERED:
            for lex in range(n // 2):
                sg = len(words)
                words.append(f"{cat}{lex}_sg")
                pl = len(words)
                words.append(f"{cat}{lex}_pl")
                category[sg] = category[pl] = cat
                number[sg], number[pl] = "sg", "pl"
                counterpart[sg], counterpart[pl] = pl, sg
        else:
            for lex in range(n):
                wid = len(words)
                words.append(f"{cat}{lex}")
                category[wid] = cat
    return Vocabulary(tuple(words), category, number, counterpart)


def _usable_templates(config: CorpusConfig) -> list[int]:
    return [
        i for i, t in enumerate(TEMPLATES)
        if config.min_len <= len(t.slots) <= config.max_len
    ]


def _fill_template(t: Template, vocab: Vocabulary, rng: np.random.Generator) -> ParsedSentence:
    numbers = {"subj": ("sg", "pl")[rng.integers(2)], "obj": ("sg", "pl")[rng.integers(2)]}
    tokens: list[int] = []
    for cat, group in t.slots:
        pool = vocab.ids(cat, numbers[group] if group is not None and cat in NUMBERED else None)
        if not pool:
            raise GrammarError(f"vocabulary has no {cat} word for template {t.name}")
        tokens.append(pool[rng.integers(len(pool))])
    parent = [ROOT] * len(tokens)
    relation: list[str | None] = [None] * len(tokens)
    for child, par, rel in t.arcs:
        parent[child] = par
        relation[child] = rel
    return ParsedSentence(tokens, parent, relation)


def generate_corpus(config: CorpusConfig, vocab: Vocabulary | None = None) -> list[ParsedSentence]:
    config.validate()
    vocab = vocab or build_vocabulary(config)
    usable = _usable_templates(config)
    if not usable:
        raise GrammarError("no template fits the configured length bounds")
    if config.template_weights is None:
        weights = np.full(len(usable), 1.0 / len(usable))
    else:
        w = np.asarray(config.template_weights, dtype=float)[usable]
        if w.sum() <= 0:
            raise GrammarError("all usable templates have zero weight")
        weights = w / w.sum()
    rng = np.random.default_rng(config.seed)
    out = []
    for _ in range(config.size):
        t = TEMPLATES[usable[rng.choice(len(usable), p=weights)]]
        out.append(_fill_template(t, vocab, rng))
    return out


def agreement_violations(
    tokens: Sequence[int],
    parent: Sequence[int],
    relation: Sequence[str | None],
    vocab: Vocabulary,
) -> list[tuple[int, str]]:
    """Agreement rules over gold arcs: (child index, broken rule) per hit."""
    violations = []
    subj_of_verb: dict[int, int] = {}
    for i, (p, r) in enumerate(zip(parent, relation)):
        if r == "nsubj":
            subj_of_verb[p] = i
    for i, (p, r) in enumerate(zip(parent, relation)):
        if r == "det":
            if vocab.number[tokens[i]] != vocab.number[tokens[p]]:
                violations.append((i, "determiner-noun"))
        elif r == "nsubj":
            if vocab.number[tokens[i]] != vocab.number[tokens[p]]:
                violations.append((i, "subject-verb"))
        elif r == "dobj" and vocab.category[tokens[i]] == "refl":
            subj = subj_of_verb.get(p)
            if subj is not None and vocab.number[tokens[i]] != vocab.number[tokens[subj]]:
                violations.append((i, "reflexive"))
    return violations


def infer_parse(tokens: Sequence[int], vocab: Vocabulary) -> ParsedSentence:
    """Re-parse by category signature; templates have unique signatures."""
    sig = tuple(vocab.category[w] for w in tokens)
    for t in TEMPLATES:
        if t.signature() == sig:
            parent = [ROOT] * len(tokens)
            relation: list[str | None] = [None] * len(tokens)
            for child, par, rel in t.arcs:
                parent[child] = par
                relation[child] = rel
            return ParsedSentence(list(tokens), parent, relation)
    raise GrammarError(f"no template matches category signature {sig}")


def is_grammatical(tokens: Sequence[int], vocab: Vocabulary) -> bool:
    try:
        s = infer_parse(tokens, vocab)
    except GrammarError:
        return False
    return not agreement_violations(s.tokens, s.parent, s.relation, vocab)


def _corruptible_slots(sentence: ParsedSentence, vocab: Vocabulary, phenomenon: str) -> list[int]:
    slots = []
    for i, (p, r) in enumerate(zip(sentence.parent, sentence.relation)):
        cat = vocab.category[sentence.tokens[i]]
        if phenomenon == "subject-verb" and r == "nsubj":
            slots.append(p)  # flip the verb, not the noun
        elif phenomenon == "determiner-noun" and r == "det":
            slots.append(i)
        elif phenomenon == "reflexive" and cat == "refl":
            slots.append(i)
    return slots


def generate_minimal_pairs(
    config: CorpusConfig, count: int, seed: int, vocab: Vocabulary | None = None
) -> list[MinimalPair]:
    """Balanced pairs across the three phenomena; the corrupted sequence
    differs from the acceptable one at exactly one token."""
    if count < 0:
        raise GrammarError("count must be >= 0")
    config.validate()
    vocab = vocab or build_vocabulary(config)
    usable = _usable_templates(config)
    rng = np.random.default_rng(seed)
    pairs: list[MinimalPair] = []
    for k in range(count):
        phenomenon = PHENOMENA[k % len(PHENOMENA)]
        for _ in range(1000):
            t = TEMPLATES[usable[rng.integers(len(usable))]]
            sent = _fill_template(t, vocab, rng)
            slots = _corruptible_slots(sent, vocab, phenomenon)
            if slots:
                break
        else:
            raise GrammarError(f"no template supports phenomenon {phenomenon}")
        slot = slots[rng.integers(len(slots))]
        wid = sent.tokens[slot]
        if wid not in vocab.counterpart:
            raise GrammarError(f"no number-contrasting counterpart for word {wid}")
        bad = list(sent.tokens)
        bad[slot] = vocab.counterpart[wid]
        pairs.append(MinimalPair(sent, bad, phenomenon, slot))
    return pairs


def check_tree(sentence: ParsedSentence) -> None:
    """Single root, every walk reaches it, no cycles."""
    n = len(sentence.tokens)
    roots = [i for i, p in enumerate(sentence.parent) if p == ROOT]
    if len(roots) != 1:
        raise GrammarError(f"expected one root, found {roots}")
    for i in range(n):
        seen = set()
        j = i
        while j != ROOT:
            if j in seen or not (0 <= j < n):
                raise GrammarError(f"cycle or bad parent reached from token {i}")
            seen.add(j)
            j = sentence.parent[j]


# -- file formats ---------------------------------------------------------


def write_corpus_jsonl(path: Path | str, corpus: Iterable[ParsedSentence]) -> None:
    with open(path, "w") as fh:
        for s in corpus:
            fh.write(json.dumps({"tokens": s.tokens, "parent": s.parent, "relation": s.relation}))
            fh.write("\n")


def read_corpus_jsonl(path: Path | str) -> list[ParsedSentence]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(ParsedSentence(d["tokens"], d["parent"], d["relation"]))
    return out


def write_pairs_jsonl(path: Path | str, pairs: Iterable[MinimalPair]) -> None:
    with open(path, "w") as fh:
        for p in pairs:
            fh.write(json.dumps({
                "tokens": p.acceptable.tokens,
                "parent": p.acceptable.parent,
                "relation": p.acceptable.relation,
                "unacceptable": p.unacceptable,
                "phenomenon": p.phenomenon,
                "corrupt_index": p.corrupt_index,
            }))
            fh.write("\n")


def read_pairs_jsonl(path: Path | str) -> list[MinimalPair]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                d = json.loads(line)
                out.append(MinimalPair(
                    ParsedSentence(d["tokens"], d["parent"], d["relation"]),
                    d["unacceptable"], d["phenomenon"], d["corrupt_index"],
                ))
    return out


def write_vocabulary(path: Path | str, vocab: Vocabulary) -> None:
    doc = {
        "words": list(vocab.words),
        "category": {str(k): v for k, v in vocab.category.items()},
        "number": {str(k): v for k, v in vocab.number.items()},
        "counterpart": {str(k): v for k, v in vocab.counterpart.items()},
        "specials": SPECIALS,
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def read_vocabulary(path: Path | str) -> Vocabulary:
    doc = json.loads(Path(path).read_text())
    return Vocabulary(
        tuple(doc["words"]),
        {int(k): v for k, v in doc["category"].items()},
        {int(k): v for k, v in doc["number"].items()},
        {int(k): v for k, v in doc["counterpart"].items()},
    )
