"""Diagonally-biased word alignment (fast_align-style IBM Model 2) trained by EM.

Only the target->source direction is modelled: each target position picks one
source position or the null word. The position prior is

    p(a_j = i) = (1 - p0) * exp(-tension * |(i+1)/n - (j+1)/m|) / Z(j, m, n)
    p(a_j = null) = p0

with a fixed tension; EM re-estimates the translation table t(tgt | src).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .corpus import Sentence

log = logging.getLogger(__name__)

NULL = "<null>"


@dataclass(frozen=True)
class ParallelPair:
    src: Sentence
    tgt: Sentence
    src_pos: tuple[str, ...] = ()
    tgt_pos: tuple[str, ...] = ()
    links: tuple[tuple[int, int], ...] = ()
    pair_id: str = ""

    def __post_init__(self):
        if self.src_pos and len(self.src_pos) != len(self.src):
            raise ValueError(f"{self.pair_id}: {len(self.src_pos)} source tags for {len(self.src)} tokens")
        if self.tgt_pos and len(self.tgt_pos) != len(self.tgt):
            raise ValueError(f"{self.pair_id}: {len(self.tgt_pos)} target tags for {len(self.tgt)} tokens")
        if len(set(self.links)) != len(self.links):
            raise ValueError(f"{self.pair_id}: duplicate alignment links")
        for i, j in self.links:
            if not (0 <= i < len(self.src) and 0 <= j < len(self.tgt)):
                raise ValueError(f"{self.pair_id}: link ({i}, {j}) out of range")

    @property
    def has_pos(self) -> bool:
        return bool(self.src_pos) and bool(self.tgt_pos)

    def swapped(self) -> "ParallelPair":
        """Same pair with source and target exchanged."""
        return ParallelPair(
            src=self.tgt,
            tgt=self.src,
            src_pos=self.tgt_pos,
            tgt_pos=self.src_pos,
            links=tuple(sorted((j, i) for i, j in self.links)),
            pair_id=self.pair_id,
        )


@dataclass
class AlignDiagnostics:
    skipped_pairs: int = 0
    unseen_tgt: int = 0
    unseen_src: int = 0


@dataclass(frozen=True)
class AlignmentModel:
    src_vocab: tuple[str, ...]
    tgt_vocab: tuple[str, ...]
    table: np.ndarray  # (len(src_vocab) + 1, len(tgt_vocab)); row 0 = null; rows sum to 1
    diagonal_tension: float = 4.0
    null_prob: float = 0.08
    loglik_history: tuple[float, ...] = ()
    diagnostics: AlignDiagnostics = field(default_factory=AlignDiagnostics, compare=False)

    def __post_init__(self):
        if not self.diagonal_tension > 0:
            raise ValueError("diagonal_tension must be positive")
        if not 0 <= self.null_prob < 1:
            raise ValueError("null_prob must be in [0, 1)")
        object.__setattr__(self, "_src_index", {w: k + 1 for k, w in enumerate(self.src_vocab)})
        object.__setattr__(self, "_tgt_index", {w: k for k, w in enumerate(self.tgt_vocab)})

    def prob(self, src: str | None, tgt: str) -> float:
        """t(tgt | src); ``src=None`` queries the null word."""
        f = self._tgt_index.get(tgt)
        e = 0 if src is None else self._src_index.get(src)
        if f is None or e is None:
            return 0.0
        return float(self.table[e, f])

    @property
    def ttable(self) -> dict[tuple[str, str], float]:
        out = {}
        rows = (NULL,) + self.src_vocab
        nz = np.nonzero(self.table)
        for e, f in zip(*nz):
            out[(rows[e], self.tgt_vocab[f])] = float(self.table[e, f])
        return out

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            table=self.table,
            src_vocab=np.array(self.src_vocab, dtype=str),
            tgt_vocab=np.array(self.tgt_vocab, dtype=str),
            params=np.array([self.diagonal_tension, self.null_prob]),
            loglik=np.array(self.loglik_history),
        )

    @classmethod
    def load(cls, path: str | Path) -> "AlignmentModel":
        with np.load(path) as z:
            return cls(
                src_vocab=tuple(str(v) for v in z["src_vocab"]),
                tgt_vocab=tuple(str(v) for v in z["tgt_vocab"]),
                table=z["table"],
                diagonal_tension=float(z["params"][0]),
                null_prob=float(z["params"][1]),
                loglik_history=tuple(z["loglik"].tolist()),
            )


def position_prior(n: int, m: int, j: int, tension: float, null_prob: float) -> list[float]:
    """Non-null alignment probabilities p(a_j = i) for i in range(n)."""
    rel = (j + 1) / m
    w = [math.exp(-tension * abs((i + 1) / n - rel)) for i in range(n)]
    z = sum(w)
    return [(1.0 - null_prob) * v / z for v in w]


def _index_corpus(pairs, src_index, tgt_index):
    src_ids, tgt_ids, src_off, tgt_off = [], [], [0], [0]
    for p in pairs:
        src_ids.extend(src_index[w] for w in p.src.surfaces)
        tgt_ids.extend(tgt_index[w] for w in p.tgt.surfaces)
        src_off.append(len(src_ids))
        tgt_off.append(len(tgt_ids))
    return (
        np.array(src_ids, dtype=np.int64),
        np.array(src_off, dtype=np.int64),
        np.array(tgt_ids, dtype=np.int64),
        np.array(tgt_off, dtype=np.int64),
    )


def train_aligner(
    pairs: Sequence[ParallelPair],
    iterations: int = 5,
    diagonal_tension: float = 4.0,
    null_prob: float = 0.08,
) -> AlignmentModel:
    """Estimate t(tgt | src) by EM under the fixed diagonal position prior.

    Pairs with an empty side are skipped and counted in the diagnostics. The
    returned model records the corpus log-likelihood computed in each E-step;
    with the prior held fixed this sequence is non-decreasing.
    """
    if not pairs:
        raise ValueError("no parallel pairs")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    diag = AlignDiagnostics()
    usable = []
    for p in pairs:
        if len(p.src) == 0 or len(p.tgt) == 0:
            diag.skipped_pairs += 1
        else:
            usable.append(p)
    if not usable:
        raise ValueError("every pair has an empty side")
    src_vocab = tuple(dict.fromkeys(w for p in usable for w in p.src.surfaces))
    tgt_vocab = tuple(dict.fromkeys(w for p in usable for w in p.tgt.surfaces))
    src_index = {w: k + 1 for k, w in enumerate(src_vocab)}
    tgt_index = {w: k for k, w in enumerate(tgt_vocab)}
    arrays = _index_corpus(usable, src_index, tgt_index)

    table = np.full((len(src_vocab) + 1, len(tgt_vocab)), 1.0 / len(tgt_vocab))
    history = []
    for it in range(iterations):
        counts, ll = kernels.ibm2_estep(*arrays, table, diagonal_tension, null_prob)
        history.append(ll)
        totals = counts.sum(axis=1, keepdims=True)
        safe = np.where(totals > 0, totals, 1.0)
        table = np.where(totals > 0, counts / safe, table)
        log.debug("align iteration %d loglik %.6f", it + 1, ll)
    if diag.skipped_pairs:
        log.info("skipped %d pairs with an empty side", diag.skipped_pairs)
    return AlignmentModel(
        src_vocab=src_vocab,
        tgt_vocab=tgt_vocab,
        table=table,
        diagonal_tension=diagonal_tension,
        null_prob=null_prob,
        loglik_history=tuple(history),
        diagnostics=diag,
    )


def align_pair(model: AlignmentModel, pair: ParallelPair) -> ParallelPair:
    """Viterbi links (i, j) for every target position the null word does not win.

    Existing links on ``pair`` are replaced. Target words unseen in training
    get no link and bump ``model.diagnostics.unseen_tgt``.
    """
    n, m = len(pair.src), len(pair.tgt)
    if n == 0 or m == 0:
        raise ValueError(f"{pair.pair_id}: empty side")
    src_rows = [model._src_index.get(w) for w in pair.src.surfaces]
    model.diagnostics.unseen_src += sum(r is None for r in src_rows)
    links = []
    for j, f_word in enumerate(pair.tgt.surfaces):
        f = model._tgt_index.get(f_word)
        if f is None:
            model.diagnostics.unseen_tgt += 1
            continue
        prior = position_prior(n, m, j, model.diagonal_tension, model.null_prob)
        best_i, best = -1, -1.0
        for i, row in enumerate(src_rows):
            s = 0.0 if row is None else prior[i] * model.table[row, f]
            if s > best:
                best_i, best = i, s
        null_score = model.null_prob * model.table[0, f]
        if best_i >= 0 and best > 0 and best >= null_score:
            links.append((best_i, j))
    return replace(pair, links=tuple(links))


# --------------------------------------------------------------------------- file formats


def read_parallel(path: str | Path) -> list[tuple[Sentence, Sentence]]:
    """Lines of ``source tokens ||| target tokens``, tokens space-separated."""
    out = []
    for k, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if "|||" not in line:
            raise ValueError(f"{path}:{k + 1}: missing ||| delimiter")
        src, tgt = line.split("|||", 1)
        out.append((Sentence.from_surfaces(src.split(), f"{k}"), Sentence.from_surfaces(tgt.split(), f"{k}")))
    return out


def write_parallel(path: str | Path, pairs: Sequence[ParallelPair]) -> None:
    lines = [f"{p.src.text} ||| {p.tgt.text}" for p in pairs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_pos(path: str | Path) -> list[tuple[str, ...]]:
    return [tuple(line.split()) for line in Path(path).read_text(encoding="utf-8").splitlines()]


def write_pos(path: str | Path, tags: Sequence[Sequence[str]]) -> None:
    Path(path).write_text("\n".join(" ".join(t) for t in tags) + "\n", encoding="utf-8")


def format_links(links: Sequence[tuple[int, int]]) -> str:
    return " ".join(f"{i}-{j}" for i, j in links)


def parse_links(line: str) -> tuple[tuple[int, int], ...]:
    out = []
    for item in line.split():
        i, j = item.split("-")
        out.append((int(i), int(j)))
    return tuple(out)


def read_alignments(path: str | Path) -> list[tuple[tuple[int, int], ...]]:
    return [parse_links(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]


def write_alignments(path: str | Path, pairs: Sequence[ParallelPair]) -> None:
    Path(path).write_text("\n".join(format_links(p.links) for p in pairs) + "\n", encoding="utf-8")


def load_pairs(
    parallel: str | Path,
    src_pos: str | Path | None = None,
    tgt_pos: str | Path | None = None,
    alignments: str | Path | None = None,
) -> list[ParallelPair]:
    """Assemble ParallelPairs from the line-aligned corpus, tag and link files."""
    sents = read_parallel(parallel)
    n = len(sents)
    sp = read_pos(src_pos) if src_pos else [()] * n
    tp = read_pos(tgt_pos) if tgt_pos else [()] * n
    al = read_alignments(alignments) if alignments else [()] * n
    for name, col in (("source POS", sp), ("target POS", tp), ("alignment", al)):
        if len(col) != n:
            raise ValueError(f"{name} file has {len(col)} lines, corpus has {n}")
    return [
        ParallelPair(s, t, tuple(a), tuple(b), tuple(links), pair_id=str(k))
        for k, ((s, t), a, b, links) in enumerate(zip(sents, sp, tp, al))
    ]
