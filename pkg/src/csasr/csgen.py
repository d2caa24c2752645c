"""Synthetic code-switched text from aligned, POS-tagged parallel pairs.

A source token is replaced by its aligned target token when both carry the
same POS tag. In phrase mode the substitution may continue over the following
diagonal links (i+1, j+1), (i+2, j+2), ... regardless of their tags. Each
output has exactly one substituted region and at most two switch points.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .align import ParallelPair
from .corpus import Token

MAX_SWITCH_POINTS = 2
TOKEN = "token"
PHRASE = "phrase"
MODES = ("token-only", "token-or-phrase")


def switch_points(tokens: Sequence[Token]) -> int:
    """Number of adjacent token boundaries where the language changes."""
    return sum(a.lang != b.lang for a, b in zip(tokens, tokens[1:]))


@dataclass(frozen=True)
class GenConfig:
    mode: str = "token-or-phrase"
    max_outputs_per_pair: int = 64
    pos_match_required: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.max_outputs_per_pair < 1:
            raise ValueError("max_outputs_per_pair must be >= 1")


@dataclass(frozen=True)
class CsSentence:
    tokens: tuple[Token, ...]
    origin: str
    sub_span: tuple[int, int]  # (source start, length)
    sub_kind: str

    @property
    def text(self) -> str:
        return " ".join(t.surface for t in self.tokens)

    @property
    def switch_points(self) -> int:
        return switch_points(self.tokens)

    def to_json(self) -> str:
        return json.dumps(
            {
                "text": self.text,
                "origin": self.origin,
                "sub_span": list(self.sub_span),
                "sub_kind": self.sub_kind,
                "switch_points": self.switch_points,
            },
            ensure_ascii=False,
        )


class MissingPosError(ValueError):
    pass


def _check(pair: ParallelPair, config: GenConfig) -> None:
    if config.pos_match_required and not pair.has_pos:
        raise MissingPosError(f"pair {pair.pair_id!r} has no POS tags")


def _anchors(pair: ParallelPair, config: GenConfig) -> list[tuple[int, int]]:
    out = []
    for i, j in sorted(pair.links):
        if not config.pos_match_required or pair.src_pos[i] == pair.tgt_pos[j]:
            out.append((i, j))
    return out


def _substitute(pair: ParallelPair, i: int, j: int, length: int, kind: str) -> CsSentence:
    src = pair.src.tokens
    toks = src[:i] + pair.tgt.tokens[j : j + length] + src[i + length :]
    return CsSentence(tokens=toks, origin=pair.pair_id, sub_span=(i, length), sub_kind=kind)


def _collect(candidates: Iterable[CsSentence], limit: int) -> list[CsSentence]:
    seen = set()
    out = []
    for cs in candidates:
        key = tuple(t.surface for t in cs.tokens)
        if key in seen or cs.switch_points > MAX_SWITCH_POINTS:
            continue
        seen.add(key)
        out.append(cs)
        if len(out) >= limit:
            break
    return out


def generate_token_sub(pair: ParallelPair, config: GenConfig = GenConfig(mode="token-only")) -> list[CsSentence]:
    """One output per POS-matched link, each replacing a single source token."""
    _check(pair, config)
    cands = (_substitute(pair, i, j, 1, TOKEN) for i, j in _anchors(pair, config))
    return _collect(cands, config.max_outputs_per_pair)


def phrase_length(links: set, i: int, j: int) -> int:
    """Length of the diagonal link chain starting at anchor (i, j)."""
    k = 1
    while (i + k, j + k) in links:
        k += 1
    return k


def generate_phrase_sub(pair: ParallelPair, config: GenConfig = GenConfig()) -> list[CsSentence]:
    """Single-token and maximal-phrase substitutions for every POS-matched anchor.

    Only the anchor's tags are compared; the extension follows the diagonal
    link chain without looking at tags.
    """
    _check(pair, config)
    links = set(pair.links)

    def cands():
        for i, j in _anchors(pair, config):
            yield _substitute(pair, i, j, 1, TOKEN)
            k = phrase_length(links, i, j)
            if k > 1:
                yield _substitute(pair, i, j, k, PHRASE)

    return _collect(cands(), config.max_outputs_per_pair)


def generate(pair: ParallelPair, config: GenConfig) -> list[CsSentence]:
    if config.mode == "token-only":
        return generate_token_sub(pair, config)
    return generate_phrase_sub(pair, config)


def generate_corpus(pairs: Sequence[ParallelPair], config: GenConfig) -> list[CsSentence]:
    """Generation over a corpus, ordered by pair then anchor."""
    out = []
    for pair in pairs:
        out.extend(generate(pair, config))
    return out


def write_jsonl(path: str | Path, sentences: Sequence[CsSentence]) -> None:
    Path(path).write_text("".join(cs.to_json() + "\n" for cs in sentences), encoding="utf-8")


def read_jsonl_texts(path: str | Path) -> list[str]:
    return [json.loads(line)["text"] for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
