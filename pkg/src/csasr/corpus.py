"""Mixed-script tokenization, BPE training and the bilingual union vocabulary."""
from __future__ import annotations

import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

EN = "EN"
ZH = "ZH"
LANGS = (EN, ZH)

# CJK Unified Ideographs + Extension A
CJK_BLOCKS = ((0x4E00, 0x9FFF), (0x3400, 0x4DBF))

CONT = "@@"
BLANK_SURFACE = "<blk>"
BPE_HEADER = "#csasr-bpe v1"
VOCAB_HEADER = "#csasr-vocab v1"


def is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in CJK_BLOCKS)


def classify(surface: str) -> str:
    """Language of a token surface, decided by its first code point."""
    return ZH if is_cjk(surface[0]) else EN


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "'" or unicodedata.category(ch) == "Mn"


@dataclass(frozen=True)
class Token:
    surface: str
    lang: str

    def __post_init__(self):
        if not self.surface:
            raise ValueError("token surface must be non-empty")

    @classmethod
    def of(cls, surface: str) -> "Token":
        return cls(surface, classify(surface))


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[Token, ...] = ()
    source_id: str = ""

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    @property
    def is_empty(self) -> bool:
        return not self.tokens

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def text(self) -> str:
        return " ".join(self.surfaces)

    @classmethod
    def from_surfaces(cls, surfaces: Iterable[str], source_id: str = "") -> "Sentence":
        return cls(tuple(Token.of(s) for s in surfaces), source_id)

    def to_dict(self) -> dict:
        return {"source_id": self.source_id, "tokens": [[t.surface, t.lang] for t in self.tokens]}

    @classmethod
    def from_dict(cls, d: dict) -> "Sentence":
        return cls(tuple(Token(s, lang) for s, lang in d["tokens"]), d.get("source_id", ""))


EMPTY_SENTENCE = Sentence()


def tokenize_mixed(text: str, source_id: str = "") -> Sentence:
    """Split text into CJK characters and non-CJK word chunks.

    Every CJK character is a ZH token; every maximal run of word characters
    between whitespace, punctuation or CJK is an EN token. Punctuation is
    dropped. A text with no tokens yields a sentence whose ``is_empty`` is true.

    >>> tokenize_mixed("你好world").surfaces
    ['你', '好', 'world']
    """
    tokens: list[Token] = []
    buf: list[str] = []

    def flush():
        word = "".join(buf).strip("'")
        buf.clear()
        if word:
            tokens.append(Token(word, classify(word)))

    for ch in text:
        if is_cjk(ch):
            flush()
            tokens.append(Token(ch, ZH))
        elif _is_word_char(ch):
            buf.append(ch)
        else:
            flush()
    flush()
    if not tokens:
        return Sentence((), source_id)
    return Sentence(tuple(tokens), source_id)


def read_corpus(path: str | Path) -> list[Sentence]:
    """One sentence per line, UTF-8."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [tokenize_mixed(line, source_id=f"{Path(path).name}:{i}") for i, line in enumerate(lines)]


# --------------------------------------------------------------------------- BPE


@dataclass(frozen=True)
class BpeModel:
    merges: tuple[tuple[str, str], ...]
    base_symbols: tuple[str, ...]
    _cache: dict = field(default_factory=dict, compare=False, repr=False, hash=False)

    @property
    def symbols(self) -> list[str]:
        """Base characters followed by merge products, in creation order."""
        out = list(self.base_symbols)
        seen = set(out)
        for a, b in self.merges:
            s = a + b
            if s not in seen:
                seen.add(s)
                out.append(s)
        return out

    def units(self) -> list[str]:
        """Every piece encoding can emit: word-final ``s`` and word-internal ``s@@``."""
        return sorted({u for s in self.symbols for u in (s, s + CONT)})

    def segment(self, word: str) -> tuple[str, ...]:
        """Split a word into symbols by replaying the merges in training order."""
        hit = self._cache.get(word)
        if hit is not None:
            return hit
        syms = tuple(word)
        for a, b in self.merges:
            if len(syms) < 2:
                break
            syms = _merge_word(syms, a, b)
        seg = tuple(syms)
        self._cache[word] = seg
        return seg

    def encode(self, word: str) -> list[str]:
        seg = self.segment(word)
        return [s + CONT for s in seg[:-1]] + [seg[-1]]

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "BpeModel":
        lines = Path(path).read_text(encoding="utf-8").split("\n")
        return cls.from_lines(lines)

    def to_lines(self) -> list[str]:
        return [BPE_HEADER, " ".join(self.base_symbols)] + [f"{a} {b}" for a, b in self.merges]

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "BpeModel":
        if not lines or lines[0] != BPE_HEADER:
            raise ValueError("not a csasr BPE file")
        base = tuple(lines[1].split()) if len(lines) > 1 else ()
        merges = tuple(tuple(line.split(" ")) for line in lines[2:] if line)
        return cls(merges=merges, base_symbols=base)


def decode_units(units: Sequence[str]) -> str:
    """Join BPE pieces and characters into space-separated text."""
    out: list[str] = []
    word = ""
    for u in units:
        if u.endswith(CONT):
            word += u[: -len(CONT)]
            continue
        out.append(word + u)
        word = ""
    if word:
        out.append(word)
    return " ".join(out)


def _merge_word(syms: tuple[str, ...], a: str, b: str) -> tuple[str, ...]:
    out = []
    i = 0
    while i < len(syms):
        if i + 1 < len(syms) and syms[i] == a and syms[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(syms[i])
            i += 1
    return tuple(out)


def train_bpe(corpus: Sequence[Sentence], num_merges: int, lang: str | None = None) -> BpeModel:
    """Greedy most-frequent-pair BPE over the words of ``corpus``.

    Ties between equally frequent pairs go to the lexicographically smallest
    pair. Training stops early once no adjacent pair remains.

    Args:
        corpus: tokenized sentences; only tokens of ``lang`` are used if given.
        num_merges: maximum number of merges to learn.
    """
    if not corpus:
        raise ValueError("corpus must be non-empty")
    if num_merges < 0:
        raise ValueError("num_merges must be >= 0")
    freqs: Counter = Counter()
    for sent in corpus:
        for tok in sent.tokens:
            if lang is None or tok.lang == lang:
                freqs[tok.surface] += 1
    words = {tuple(w): c for w, c in freqs.items()}
    base = sorted({ch for w in freqs for ch in w})
    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        pairs: Counter = Counter()
        for syms, c in words.items():
            for a, b in zip(syms, syms[1:]):
                pairs[(a, b)] += c
        if not pairs:
            break
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        merges.append(best)
        words = {_merge_word(s, *best): c for s, c in words.items()}
    return BpeModel(merges=tuple(merges), base_symbols=tuple(base))


# --------------------------------------------------------------------------- vocabulary


class VocabCollisionError(ValueError):
    def __init__(self, collisions: Sequence[str]):
        self.collisions = list(collisions)
        super().__init__(f"surface forms present in both languages: {self.collisions}")


@dataclass(frozen=True)
class UnionVocab:
    entries: tuple[tuple[str, str], ...]  # (surface, lang); index 0 is blank
    blank_id: int = 0

    def __post_init__(self):
        surfaces = [s for s, _ in self.entries]
        if len(set(surfaces)) != len(surfaces):
            raise ValueError("duplicate surface forms in vocabulary")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(surfaces)})

    def __len__(self):
        return len(self.entries)

    def id_of(self, surface: str) -> int:
        idx = self._index.get(surface)
        if idx is None or idx == self.blank_id:
            raise KeyError(f"unit not in vocabulary: {surface!r}")
        return idx

    def surface(self, idx: int) -> str:
        return self.entries[idx][0]

    def lang(self, idx: int) -> str:
        return self.entries[idx][1]

    def __contains__(self, surface: str) -> bool:
        return surface in self._index

    def to_lines(self) -> list[str]:
        return [VOCAB_HEADER] + [f"{i}\t{s}\t{lang}" for i, (s, lang) in enumerate(self.entries)]

    @classmethod
    def from_lines(cls, lines: Sequence[str]) -> "UnionVocab":
        if not lines or lines[0] != VOCAB_HEADER:
            raise ValueError("not a csasr vocabulary file")
        entries = []
        for k, line in enumerate(x for x in lines[1:] if x):
            i, s, lang = line.split("\t")
            if int(i) != k:
                raise ValueError(f"vocabulary index gap at line {k + 2}")
            entries.append((s, lang))
        return cls(tuple(entries))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "UnionVocab":
        return cls.from_lines(Path(path).read_text(encoding="utf-8").split("\n"))


def build_union_vocab(en_bpe: BpeModel | Sequence[str], zh_chars: Iterable[str]) -> UnionVocab:
    """Blank first, then every EN unit and ZH character sorted by surface.

    ``en_bpe`` may be a trained BPE model (its ``units()`` are used) or a plain
    list of EN units.
    """
    en_units = list(en_bpe.units()) if isinstance(en_bpe, BpeModel) else list(en_bpe)
    zh = sorted(set(zh_chars))
    if not en_units or not zh:
        raise ValueError("both unit inventories must be non-empty")
    clash = sorted(set(en_units) & set(zh))
    if clash:
        raise VocabCollisionError(clash)
    units = [(u, EN) for u in set(en_units)] + [(c, ZH) for c in zh]
    units.sort()
    return UnionVocab(((BLANK_SURFACE, "BLANK"),) + tuple(units))


@dataclass(frozen=True)
class TextCodec:
    """Text <-> vocabulary ids through ``tokenize_mixed`` and the EN BPE."""

    bpe: BpeModel
    vocab: UnionVocab

    def units(self, sentence: Sentence) -> list[list[str]]:
        """Units per sentence token (EN words may span several BPE pieces)."""
        out = []
        for tok in sentence.tokens:
            out.append(self.bpe.encode(tok.surface) if tok.lang == EN else [tok.surface])
        return out

    def encode_sentence(self, sentence: Sentence) -> list[int]:
        return [self.vocab.id_of(u) for units in self.units(sentence) for u in units]

    def encode(self, text: str) -> list[int]:
        return self.encode_sentence(tokenize_mixed(text))

    def decode(self, ids: Sequence[int]) -> str:
        return decode_units([self.vocab.surface(int(i)) for i in ids if int(i) != self.vocab.blank_id])

    def to_dict(self) -> dict:
        return {"bpe": self.bpe.to_lines(), "vocab": self.vocab.to_lines()}

    @classmethod
    def from_dict(cls, d: dict) -> "TextCodec":
        return cls(BpeModel.from_lines(d["bpe"]), UnionVocab.from_lines(d["vocab"]))
