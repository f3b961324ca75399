"""Templated speaker, tokenizer/vocabulary and n-gram overlap statistics.

The grammar renders an expert path hop by hop ("walk north to the glowing
lamp ..."). Each concept (motion verb, compass direction, landmark noun,
stop verb) owns three lexeme pools:

* ``core``  - the everyday words, used most of the time in every split;
* ``rare``  - in-vocabulary synonyms drawn with probability ``rare_rate_seen``
  in training environments. Unseen environments draw landmark synonyms from
  this pool too, at the higher ``rare_rate_unseen``;
* ``novel`` - direction and verb synonyms drawn with probability
  ``rare_rate_unseen`` in unseen environments. They never occur in training
  text, so they fall outside the training vocabulary by construction.

Landmark adjectives ("glowing", "wooden") are core-only and give contextual
models a cue that survives a noun being out of vocabulary.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:  # pragma: no cover
    from .world import NavGraph

PAD, UNK, MASK, BOS, EOS = 0, 1, 2, 3, 4
RESERVED = ("<pad>", "<unk>", "<mask>", "<bos>", "<eos>")

DEFAULT_MAX_LEN = 60
_WORD_RE = re.compile(r"[a-z0-9]+")


class RenderError(ValueError):
    pass


class MetricError(ValueError):
    """The requested statistic is undefined for the given corpora."""


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    raw_text: str = ""

    def __len__(self) -> int:
        return len(self.tokens)


class Vocabulary:
    """Token <-> id bijection with reserved ids 0-4 (pad, unk, mask, bos, eos)."""

    def __init__(self, words: Iterable[str] = ()):
        self._itos: list[str] = list(RESERVED)
        self._stoi: dict[str, int] = {w: i for i, w in enumerate(self._itos)}
        for w in words:
            self.add(w)

    def add(self, word: str) -> int:
        if word not in self._stoi:
            self._stoi[word] = len(self._itos)
            self._itos.append(word)
        return self._stoi[word]

    def __len__(self) -> int:
        return len(self._itos)

    def __contains__(self, word: str) -> bool:
        return word in self._stoi

    def id(self, word: str) -> int:
        return self._stoi.get(word, UNK)

    def word(self, idx: int) -> str:
        return self._itos[idx]

    @property
    def words(self) -> list[str]:
        return list(self._itos)

    @classmethod
    def from_texts(cls, texts: Iterable[str]) -> "Vocabulary":
        counts = Counter(w for t in texts for w in split_words(t))
        # frequency-descending, alphabetical tie-break: stable across runs
        return cls(w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))

    def to_lines(self) -> str:
        return "\n".join(self._itos) + "\n"

    @classmethod
    def from_lines(cls, text: str) -> "Vocabulary":
        lines = text.splitlines()
        if tuple(lines[:5]) != RESERVED:
            raise ValueError("vocabulary file must start with the five reserved tokens")
        if len(set(lines)) != len(lines):
            raise ValueError("vocabulary file contains duplicate tokens")
        return cls(lines[5:])


def split_words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def tokenize(text: str, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> TokenSeq:
    """Lowercase, split on whitespace/punctuation, map OOV words to ``<unk>``, append ``<eos>``."""
    ids = [vocab.id(w) for w in split_words(text)][: max_len - 1]
    ids.append(EOS)
    return TokenSeq(tuple(ids), text)


def detokenize(seq: TokenSeq | Sequence[int], vocab: Vocabulary) -> str:
    ids = seq.tokens if isinstance(seq, TokenSeq) else seq
    return " ".join(vocab.word(i) for i in ids if i >= len(RESERVED) or i == UNK)


# ------------------------------------------------------------------ grammar


@dataclass(frozen=True)
class Lexemes:
    core: tuple[str, ...]
    rare: tuple[str, ...]
    novel: tuple[str, ...]


def _lx(core, rare, novel) -> Lexemes:
    return Lexemes(tuple(core.split()), tuple(rare.split()), tuple(novel.split()))


# landmark symbol -> (core, rare, novel, adjective)
LANDMARKS: dict[str, tuple[Lexemes, str]] = {
    "lamp": (_lx("lamp", "lantern", "sconce"), "glowing"),
    "chair": (_lx("chair", "seat", "stool"), "wooden"),
    "table": (_lx("table", "desk", "counter"), "polished"),
    "sofa": (_lx("sofa couch", "settee", "divan"), "soft"),
    "plant": (_lx("plant", "fern", "shrub"), "green"),
    "painting": (_lx("painting picture", "canvas", "portrait"), "framed"),
    "door": (_lx("door", "doorway", "portal"), "open"),
    "stairs": (_lx("stairs staircase", "steps", "stairwell"), "steep"),
    "window": (_lx("window", "pane", "casement"), "bright"),
    "bed": (_lx("bed", "cot", "bunk"), "large"),
    "sink": (_lx("sink", "basin", "washbasin"), "white"),
    "fireplace": (_lx("fireplace", "hearth", "fireside"), "warm"),
    "mirror": (_lx("mirror", "glass", "reflector"), "shiny"),
    "rug": (_lx("rug", "carpet", "mat"), "striped"),
    "piano": (_lx("piano", "keyboard", "pianoforte"), "black"),
    "mannequin": (_lx("mannequin", "dummy", "manikin"), "standing"),
}

COMPASS = ("east", "northeast", "north", "northwest", "west", "southwest", "south", "southeast")

DIRECTIONS: dict[str, Lexemes] = {
    d: Lexemes((d,), (d + "ward",), (d + "bound",)) for d in COMPASS
}

VERBS = {
    "go": _lx("go walk", "proceed head", "amble stroll"),
    "stop": _lx("stop wait", "halt", "pause"),
}

# hop clause templates, longest first; {adj} expands to "<adjective> " or ""
HOP_TEMPLATES = (
    "{go} {dir} until you reach the {adj}{lm}",
    "{go} {dir} toward the {adj}{lm}",
    "{go} {dir} to the {adj}{lm}",
)
COMPACT_HOP = "{dir} to the {lm}"
ENDINGS = ("and {stop}", "then {stop} there", "{stop} at the {lm}")


def compass_word(dx: float, dy: float) -> str:
    sector = int(round(math.atan2(dy, dx) / (math.pi / 4))) % 8
    return COMPASS[sector]


@dataclass(frozen=True)
class Grammar:
    landmarks: dict[str, tuple[Lexemes, str]] = field(default_factory=lambda: dict(LANDMARKS))
    directions: dict[str, Lexemes] = field(default_factory=lambda: dict(DIRECTIONS))
    verbs: dict[str, Lexemes] = field(default_factory=lambda: dict(VERBS))
    rare_rate_seen: float = 0.05
    rare_rate_unseen: float = 0.35
    adjective_rate: float = 0.5
    min_tokens: int = 5
    max_tokens: int = 25

    def landmark_symbols(self) -> list[str]:
        return list(self.landmarks)

    def all_words(self) -> set[str]:
        words = set()
        for text in (*HOP_TEMPLATES, COMPACT_HOP, *ENDINGS):
            words.update(w for w in split_words(re.sub(r"\{\w+\}", " ", text)))
        pools = [lx for lx, _ in self.landmarks.values()] + list(self.directions.values()) + list(self.verbs.values())
        for lx in pools:
            words.update(lx.core + lx.rare + lx.novel)
        words.update(adj for _, adj in self.landmarks.values())
        return words


def _pick(lx: Lexemes, rng: np.random.Generator, rare_rate: float, unseen: bool, novel: bool = True) -> str:
    """Draw a word for one slot; a rare draw in an unseen split takes the novel pool when ``novel``."""
    # exactly two draws per slot keeps the stream aligned across rare_rate settings
    u, k = rng.random(), rng.random()
    pool = lx.core
    if u < rare_rate:
        pool = lx.novel if unseen and novel else lx.rare
    return pool[min(int(k * len(pool)), len(pool) - 1)]


def _render_one(path, graph, grammar: Grammar, rng, rare_rate: float, unseen: bool) -> str:
    hops = []
    for u, v in zip(path[:-1], path[1:]):
        (x0, y0), (x1, y1) = graph.position(u), graph.position(v)
        sym = graph.landmark(v)
        if sym not in grammar.landmarks:
            raise RenderError(f"landmark {sym!r} at node {v} has no lexemes in the grammar")
        hops.append((compass_word(x1 - x0, y1 - y0), sym))
    if len(path) == 1:
        sym = graph.landmark(path[0])
        if sym not in grammar.landmarks:
            raise RenderError(f"landmark {sym!r} at node {path[0]} has no lexemes in the grammar")
    final_sym = graph.landmark(path[-1])

    template = HOP_TEMPLATES[int(rng.integers(len(HOP_TEMPLATES)))]
    ending = ENDINGS[int(rng.integers(len(ENDINGS)))]
    clauses = []
    for direction, sym in hops:
        lx, adj = grammar.landmarks[sym]
        use_adj = rng.random() < grammar.adjective_rate
        clauses.append(dict(
            go=_pick(grammar.verbs["go"], rng, rare_rate, unseen),
            dir=_pick(grammar.directions[direction], rng, rare_rate, unseen),
            lm=_pick(lx, rng, rare_rate, unseen, novel=False),
            adj=adj + " " if use_adj else "",
        ))
    end_slots = dict(
        stop=_pick(grammar.verbs["stop"], rng, rare_rate, unseen),
        lm=_pick(grammar.landmarks[final_sym][0], rng, rare_rate, unseen, novel=False),
    )

    def build(tmpl: str, adjectives: bool, end: str) -> str:
        parts = []
        for c in clauses:
            slots = dict(c) if adjectives else dict(c, adj="")
            parts.append(tmpl.format(**slots))
        parts.append(end.format(**end_slots))
        return " ".join(parts)

    # progressively shorter forms until the length budget fits
    for tmpl, adjectives, end in (
        (template, True, ending),
        (template, False, ending),
        (HOP_TEMPLATES[-1], False, ending),
        (COMPACT_HOP, False, "{stop}"),
    ):
        text = build(tmpl, adjectives, end)
        if len(split_words(text)) <= grammar.max_tokens:
            break
    return text


def render_instructions(
    path: Sequence[int],
    graph: "NavGraph",
    grammar: Grammar,
    M: int,
    seed: int,
    unseen: bool = False,
    rare_rate: float | None = None,
) -> list[str]:
    """Render ``M`` distinct raw instructions describing ``path``.

    ``unseen`` selects the novel synonym pool and the unseen rare rate;
    ``rare_rate`` overrides the grammar's rate for that split.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    if rare_rate is None:
        rare_rate = grammar.rare_rate_unseen if unseen else grammar.rare_rate_seen
    rng = np.random.default_rng(seed)
    out: list[str] = []
    attempts = 0
    while len(out) < M:
        text = _render_one(path, graph, grammar, rng, rare_rate, unseen)
        attempts += 1
        if text not in out or attempts > 50 * M:
            out.append(text)
    return out


# ----------------------------------------------------------- n-gram overlap


def _ngrams(seq: Sequence[int], n: int) -> set[tuple[int, ...]]:
    return {tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)}


def ngram_types(corpus: Iterable[TokenSeq | Sequence[int]], n: int) -> set[tuple[int, ...]]:
    types: set[tuple[int, ...]] = set()
    for seq in corpus:
        toks = seq.tokens if isinstance(seq, TokenSeq) else tuple(seq)
        types |= _ngrams(toks, n)
    return types


def ngram_overlap(corpus_a, corpus_b, n: int) -> float:
    """Percentage of ``corpus_b``'s n-grams that also occur anywhere in ``corpus_a``.

    Each instruction of ``b`` contributes its distinct n-grams once, so a
    phrase repeated inside one sentence counts once but shared phrases across
    sentences each count.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not corpus_a or not corpus_b:
        raise MetricError("ngram_overlap: corpora must be non-empty")
    a = ngram_types(corpus_a, n)
    total = hit = 0
    for seq in corpus_b:
        grams = _ngrams(seq.tokens if isinstance(seq, TokenSeq) else tuple(seq), n)
        total += len(grams)
        hit += len(grams & a)
    if total == 0:
        raise MetricError(f"ngram_overlap: no sequence in corpus_b has {n} tokens")
    return 100.0 * hit / total


def overlap_table(train: Sequence[TokenSeq], splits: dict[str, Sequence[TokenSeq]], ns=(1, 2, 3, 4)) -> dict[int, dict[str, float]]:
    return {n: {name: ngram_overlap(train, corpus, n) for name, corpus in splits.items() if corpus} for n in ns}
