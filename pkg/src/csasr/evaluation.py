"""Mixed error rate, minor-language keyword recall per encoder, paired bootstrap."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch

from . import kernels
from .corpus import EN, ZH, Sentence, tokenize_mixed
from .model.networks import SIMPLE, NnlmModel, TransducerModel, as_features

log = logging.getLogger(__name__)

TIE = "tie"
MONOLINGUAL = "monolingual"
SOURCES = ("E_A", "E_L", "NNLM")


@dataclass(frozen=True)
class MerReport:
    substitutions: int = 0
    insertions: int = 0
    deletions: int = 0
    ref_tokens: int = 0
    n_queries: int = 0
    skipped_empty_ref: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def mer(self) -> float:
        if self.ref_tokens == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.ref_tokens

    def __add__(self, other: "MerReport") -> "MerReport":
        return MerReport(
            self.substitutions + other.substitutions,
            self.insertions + other.insertions,
            self.deletions + other.deletions,
            self.ref_tokens + other.ref_tokens,
            self.n_queries + other.n_queries,
            self.skipped_empty_ref + other.skipped_empty_ref,
        )

    def to_dict(self) -> dict:
        return {
            "mer": self.mer,
            "S": self.substitutions,
            "I": self.insertions,
            "D": self.deletions,
            "ref_tokens": self.ref_tokens,
            "n_queries": self.n_queries,
        }


def _surfaces(text: str | Sentence, unk: str | None) -> list[str]:
    if unk is not None and isinstance(text, str):
        # markers such as "[UNK]" would otherwise survive as the word "UNK"
        text = text.replace(unk, " ")
    sent = text if isinstance(text, Sentence) else tokenize_mixed(text)
    toks = sent.surfaces
    if unk is not None:
        toks = [t for t in toks if t != unk]
    return toks


def token_mer(ref: Sequence[str], hyp: Sequence[str]) -> MerReport:
    """Edit-distance counts between two token lists (most substitutions among optimal alignments)."""
    ids: dict[str, int] = {}
    r = [ids.setdefault(t, len(ids)) for t in ref]
    h = [ids.setdefault(t, len(ids)) for t in hyp]
    s, i, d = kernels.edit_ops(r, h)
    return MerReport(s, i, d, len(ref), 1)


def mer(ref: str | Sentence, hyp: str | Sentence, unk: str | None = None) -> MerReport:
    """Token-level error rate where a token is a Latin-script word or a CJK character.

    ``unk``, when given, is a marker token removed from both sides first.
    """
    return token_mer(_surfaces(ref, unk), _surfaces(hyp, unk))


def corpus_mer(pairs: Iterable[tuple[str, str]], unk: str | None = None) -> MerReport:
    """Pooled counts over queries; queries with an empty reference are skipped and counted."""
    total = MerReport()
    skipped = 0
    for ref, hyp in pairs:
        r = _surfaces(ref, unk)
        if not r:
            skipped += 1
            continue
        total = total + token_mer(r, _surfaces(hyp, unk))
    if skipped:
        log.info("skipped %d queries with empty references", skipped)
    return MerReport(total.substitutions, total.insertions, total.deletions, total.ref_tokens,
                     total.n_queries, skipped)


def minor_language(ref: Sentence) -> str:
    """The language with strictly fewer tokens, ``tie`` or ``monolingual``."""
    n_en = sum(t.lang == EN for t in ref.tokens)
    n_zh = sum(t.lang == ZH for t in ref.tokens)
    if n_en == 0 or n_zh == 0:
        return MONOLINGUAL
    if n_en == n_zh:
        return TIE
    return EN if n_en < n_zh else ZH


# --------------------------------------------------------------------------- recall


@dataclass(frozen=True)
class RecallConfig:
    n_values: tuple[int, ...] = tuple(range(1, 11))
    exclude_blank: bool = True

    def __post_init__(self):
        if not self.n_values or min(self.n_values) < 1:
            raise ValueError("every top-N cutoff must be >= 1")


@dataclass
class RecallReport:
    recall: dict[str, dict[int, float]]
    keywords: int
    queries_used: int
    excluded_tie: int = 0
    excluded_monolingual: int = 0
    ranks: dict[str, list[int]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {src: {str(n): r for n, r in curve.items()} for src, curve in self.recall.items()}

    def meta(self) -> dict:
        return {
            "keywords": self.keywords,
            "queries_used": self.queries_used,
            "excluded_tie": self.excluded_tie,
            "excluded_monolingual": self.excluded_monolingual,
        }


def _rank(scores: np.ndarray, idx: int, exclude: int | None) -> int:
    """1-based rank of ``scores[idx]``; equal scores do not push it down."""
    s = scores[idx]
    better = scores > s
    if exclude is not None:
        better[exclude] = False
    return int(better.sum()) + 1


def encoder_recall(
    model: TransducerModel,
    items: Sequence[tuple[np.ndarray, str]],
    lm: NnlmModel | None = None,
    cfg: RecallConfig = RecallConfig(),
) -> RecallReport:
    """Top-N recall of minor-language reference tokens for E_A, E_L and the NNLM.

    E_A recalls a keyword if its acoustic-branch logit ranks within N at any
    frame; E_L and the NNLM recall it if it ranks within N after the reference
    prefix that precedes it. Keywords that span several BPE units count only if
    every unit qualifies. Tie and monolingual queries are excluded.

    Args:
        items: (features, reference text) pairs.
    """
    if model.variant != SIMPLE:
        raise ValueError("encoder recall needs the simple-joiner variant (separable branch logits)")
    blank = model.blank_id if cfg.exclude_blank else None
    sources = ["E_A", "E_L"] + (["NNLM"] if lm is not None else [])
    ranks: dict[str, list[int]] = {s: [] for s in sources}
    excluded = {TIE: 0, MONOLINGUAL: 0}
    used = 0
    codec = model.codec
    with torch.no_grad():
        for feats, ref in items:
            sent = tokenize_mixed(ref)
            minor = minor_language(sent)
            if minor in excluded:
                excluded[minor] += 1
                continue
            used += 1
            units = codec.units(sent)
            ids = [codec.vocab.id_of(u) for us in units for u in us]
            ac = model.encode(as_features(feats)).numpy()  # (T, V) acoustic logits
            lab = model.predict(torch.tensor(ids, dtype=torch.long)).numpy()  # (U+1, V)
            lm_lp = lm(torch.tensor(ids, dtype=torch.long)[None])[0].numpy() if lm is not None else None
            pos = 0
            for tok, us in zip(sent.tokens, units):
                span = range(pos, pos + len(us))
                pos += len(us)
                if tok.lang != minor:
                    continue
                # worst unit decides the keyword's rank
                ra = max(min(_rank(ac[t], ids[k], blank) for t in range(ac.shape[0])) for k in span)
                rl = max(_rank(lab[k], ids[k], blank) for k in span)
                ranks["E_A"].append(ra)
                ranks["E_L"].append(rl)
                if lm_lp is not None:
                    ranks["NNLM"].append(max(_rank(lm_lp[k], ids[k], model.blank_id) for k in span))
    n_kw = len(ranks["E_A"])
    recall = {}
    for src in sources:
        r = np.array(ranks[src])
        recall[src] = {n: (float((r <= n).mean()) if n_kw else 0.0) for n in cfg.n_values}
    return RecallReport(recall, n_kw, used, excluded[TIE], excluded[MONOLINGUAL], ranks)


def write_recall_csv(path: str | Path, report: RecallReport) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        srcs = list(report.recall)
        w.writerow(["N"] + srcs)
        for n in next(iter(report.recall.values())):
            w.writerow([n] + [f"{report.recall[s][n]:.6f}" for s in srcs])


# --------------------------------------------------------------------------- significance


def _per_query(refs: Sequence[str], hyps: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    errs, lens = [], []
    for r, h in zip(refs, hyps):
        rep = mer(r, h)
        errs.append(rep.errors)
        lens.append(rep.ref_tokens)
    return np.array(errs, dtype=np.float64), np.array(lens, dtype=np.float64)


def significance(
    refs: Sequence[str],
    hyps_a: Sequence[str],
    hyps_b: Sequence[str],
    resamples: int = 10000,
    seed: int = 0,
) -> float:
    """Two-sided paired-bootstrap p-value for the corpus MER difference A - B.

    Queries are resampled with replacement; the p-value is twice the smaller
    tail mass of the resampled difference around zero (add-one smoothed,
    capped at 1).
    """
    if not (len(refs) == len(hyps_a) == len(hyps_b)):
        raise ValueError("reference and hypothesis lists differ in length")
    if resamples < 1000:
        raise ValueError("use at least 1000 resamples")
    if not refs:
        raise ValueError("no queries")
    ea, n = _per_query(refs, hyps_a)
    eb, _ = _per_query(refs, hyps_b)
    rng = np.random.default_rng(seed)
    q = len(refs)
    le = ge = 0
    chunk = 1000
    for start in range(0, resamples, chunk):
        size = min(chunk, resamples - start)
        idx = rng.integers(0, q, size=(size, q))
        tot = n[idx].sum(axis=1)
        tot = np.where(tot > 0, tot, 1.0)
        delta = (ea[idx].sum(axis=1) - eb[idx].sum(axis=1)) / tot
        le += int((delta <= 0).sum())
        ge += int((delta >= 0).sum())
    p_le = (le + 1) / (resamples + 1)
    p_ge = (ge + 1) / (resamples + 1)
    return float(min(1.0, 2.0 * min(p_le, p_ge)))


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


__all__ = [
    "MerReport",
    "mer",
    "token_mer",
    "corpus_mer",
    "minor_language",
    "RecallConfig",
    "RecallReport",
    "encoder_recall",
    "significance",
]
