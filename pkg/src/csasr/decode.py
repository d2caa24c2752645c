"""Time-synchronous transducer beam search with shallow fusion and ILM subtraction.

Each non-blank emission adds ``lambda_lm * log P_LM(v | y) - lambda_ilm *
log P_ILM(v | y)`` to the hypothesis score; blank only advances time and
touches the transducer score. Within a frame a hypothesis may emit up to
``max_symbols_per_frame`` labels before a blank. At every expansion step the
blank exits and the emissions of all live hypotheses compete for the same
``beam_size`` slots, and hypotheses that leave a frame with identical labels
are merged by log-sum-exp of their transducer scores.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .model.loss import ilm_step_log_probs
from .model.networks import NnlmModel, TransducerModel, as_features, as_ids

NEG_INF = float("-inf")


@dataclass(frozen=True)
class FusionConfig:
    lambda_lm: float = 0.25
    lambda_ilm: float = 0.2
    beam_size: int = 8
    max_symbols_per_frame: int = 3

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_symbols_per_frame < 1:
            raise ValueError("max_symbols_per_frame must be >= 1")
        if not (math.isfinite(self.lambda_lm) and math.isfinite(self.lambda_ilm)):
            raise ValueError("fusion weights must be finite")


@dataclass(frozen=True)
class BeamHypothesis:
    tokens: tuple[int, ...]
    log_t: float
    log_lm: float
    log_ilm: float
    combined: float

    @classmethod
    def make(cls, tokens, log_t, log_lm, log_ilm, cfg: FusionConfig) -> "BeamHypothesis":
        return cls(tuple(tokens), log_t, log_lm, log_ilm, fused(log_t, log_lm, log_ilm, cfg))


class DecodeError(RuntimeError):
    def __init__(self, frame: int, msg: str = "non-finite scores"):
        self.frame = frame
        super().__init__(f"{msg} at frame {frame}")


def fused(log_t: float, log_lm: float, log_ilm: float, cfg: FusionConfig) -> float:
    out = log_t
    if cfg.lambda_lm:
        out += cfg.lambda_lm * log_lm
    if cfg.lambda_ilm:
        out -= cfg.lambda_ilm * log_ilm
    return out


def _key(combined: float, tokens: tuple) -> tuple:
    return (-combined, len(tokens), tokens)


def _logaddexp(a: float, b: float) -> float:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    m = max(a, b)
    return m + math.log1p(math.exp(-abs(a - b)))


class _PrefixCache:
    """Label-encoder, ILM and LM outputs for every label history seen so far."""

    def __init__(self, model: TransducerModel, lm: NnlmModel | None):
        self.model = model
        self.lm = lm
        self.entries: dict[tuple, tuple] = {}
        pred, state = model.label.start(1)
        lm_lp, lm_state = lm.start(1) if lm is not None else (None, None)
        self.entries[()] = self._entry(pred, state, lm_lp, lm_state, 0)

    def _entry(self, pred, state, lm_lp, lm_state, k):
        ilm = ilm_step_log_probs(self.model, pred[k : k + 1])[0].numpy()
        lm_np = lm_lp[k].numpy() if lm_lp is not None else None
        lm_st = lm_state[:, k : k + 1] if lm_state is not None else None
        return pred[k], state[:, k : k + 1], ilm, lm_np, lm_st

    def fill(self, prefixes: Sequence[tuple]) -> None:
        missing = [p for p in prefixes if p not in self.entries]
        if not missing:
            return
        parents = [self.entries[p[:-1]] for p in missing]
        ids = torch.tensor([p[-1] for p in missing], dtype=torch.long)
        state = torch.cat([e[1] for e in parents], dim=1)
        pred, state = self.model.label.step(ids, state)
        lm_lp = lm_state = None
        if self.lm is not None:
            lm_lp, lm_state = self.lm.step(ids, torch.cat([e[4] for e in parents], dim=1))
        for k, p in enumerate(missing):
            self.entries[p] = self._entry(pred, state, lm_lp, lm_state, k)

    def pred(self, prefixes: Sequence[tuple]) -> torch.Tensor:
        return torch.stack([self.entries[p][0] for p in prefixes])

    def ilm(self, p: tuple) -> np.ndarray:
        return self.entries[p][2]

    def lm_lp(self, p: tuple) -> np.ndarray | None:
        return self.entries[p][3]


def _frame_log_probs(model: TransducerModel, enc_t: torch.Tensor, preds: torch.Tensor) -> np.ndarray:
    return torch.log_softmax(model.join(enc_t[None, :], preds), dim=-1).numpy()


def beam_search(
    model: TransducerModel,
    lm: NnlmModel | None,
    x,
    cfg: FusionConfig = FusionConfig(),
) -> list[BeamHypothesis]:
    """N-best hypotheses sorted by fused score (ties: shorter, then smaller ids)."""
    if lm is None and cfg.lambda_lm != 0:
        raise ValueError("lambda_lm must be 0 without an external LM")
    blank = model.blank_id
    V = model.vocab_size
    with torch.no_grad():
        enc = model.encode(as_features(x))
        cache = _PrefixCache(model, lm)
        # frame-start hypotheses: tokens -> (log_t, log_lm, log_ilm)
        beam: dict[tuple, tuple[float, float, float]] = {(): (0.0, 0.0, 0.0)}
        for t in range(enc.shape[0]):
            live = sorted(beam.items(), key=lambda kv: _key(fused(*kv[1], cfg), kv[0]))
            exits: dict[tuple, tuple[float, float, float]] = {}
            for level in range(cfg.max_symbols_per_frame + 1):
                if not live:
                    break
                prefixes = [p for p, _ in live]
                cache.fill(prefixes)
                lp = _frame_log_probs(model, enc[t], cache.pred(prefixes))
                if not np.all(np.isfinite(lp)):
                    raise DecodeError(t)
                scores = np.array([v for _, v in live])  # (N, 3)
                base = np.array([fused(*s, cfg) for s in scores])
                cand = np.full((len(live), V), NEG_INF)
                cand[:, blank] = base + lp[:, blank]
                if level < cfg.max_symbols_per_frame:
                    lm_part = np.zeros((len(live), V))
                    ilm_part = np.stack([cache.ilm(p) for p in prefixes])
                    if lm is not None:
                        lm_part = np.stack([cache.lm_lp(p) for p in prefixes])
                    # both LMs put -inf on blank; blank is handled separately
                    lm_part[:, blank] = 0.0
                    ilm_part[:, blank] = 0.0
                    emit = base[:, None] + lp
                    if cfg.lambda_lm:
                        emit = emit + cfg.lambda_lm * lm_part
                    if cfg.lambda_ilm:
                        emit = emit - cfg.lambda_ilm * ilm_part
                    emit[:, blank] = NEG_INF
                    keep = np.arange(V) != blank
                    cand[:, keep] = emit[:, keep]
                flat = cand.ravel()
                k = min(cfg.beam_size, int(np.isfinite(flat).sum()))
                if k == 0:
                    break
                thresh = np.partition(flat, len(flat) - k)[len(flat) - k]
                picks = []
                for n, v in zip(*np.nonzero(cand >= thresh)):
                    p = prefixes[n]
                    toks = p if v == blank else p + (int(v),)
                    picks.append((_key(float(cand[n, v]), toks), n, int(v)))
                picks.sort()
                nxt = []
                for _, n, v in picks[:k]:
                    p = prefixes[n]
                    lt, llm, lilm = scores[n]
                    if v == blank:
                        lt = lt + lp[n, blank]
                        old = exits.get(p)
                        if old is not None:
                            lt = _logaddexp(old[0], lt)
                        exits[p] = (float(lt), float(llm), float(lilm))
                    else:
                        lm_v = cache.lm_lp(p)[v] if lm is not None else 0.0
                        nxt.append((p + (v,), (float(lt + lp[n, v]), float(llm + lm_v), float(lilm + cache.ilm(p)[v]))))
                live = nxt
            ranked = sorted(exits.items(), key=lambda kv: _key(fused(*kv[1], cfg), kv[0]))
            beam = dict(ranked[: cfg.beam_size])
    hyps = [BeamHypothesis.make(p, *s, cfg) for p, s in beam.items()]
    hyps.sort(key=lambda h: _key(h.combined, h.tokens))
    return hyps


def greedy_decode(model: TransducerModel, x, max_symbols_per_frame: int = 3) -> list[int]:
    """Per-frame argmax labelling; identical to a fusion-off beam search of width 1."""
    blank = model.blank_id
    with torch.no_grad():
        enc = model.encode(as_features(x))
        cache = _PrefixCache(model, None)
        tokens: tuple = ()
        log_t = 0.0
        for t in range(enc.shape[0]):
            for level in range(max_symbols_per_frame + 1):
                cache.fill([tokens])
                lp = _frame_log_probs(model, enc[t], cache.pred([tokens]))[0]
                if not np.all(np.isfinite(lp)):
                    raise DecodeError(t)
                score = log_t + lp
                best_blank = score[blank]
                if level == max_symbols_per_frame:
                    log_t = best_blank
                    break
                emit = score.copy()
                emit[blank] = NEG_INF
                v = int(np.argmax(emit))
                if best_blank >= emit[v]:
                    log_t = best_blank
                    break
                tokens = tokens + (v,)
                log_t = emit[v]
    return list(tokens)


def capped_marginal(model: TransducerModel, x, y, max_symbols_per_frame: int) -> float:
    """log of the summed probability of every alignment of ``y`` that emits at
    most ``max_symbols_per_frame`` labels per frame."""
    ids = as_ids(y)
    U = len(ids)
    with torch.no_grad():
        enc = model.encode(as_features(x))
        pred = model.predict(ids)
        lp = torch.log_softmax(model.join(enc[:, None, :], pred[None, :, :]), dim=-1).numpy()
    blank = model.blank_id
    alpha = [0.0] + [NEG_INF] * U
    for t in range(enc.shape[0]):
        new = [NEG_INF] * (U + 1)
        for u in range(U + 1):
            cur = alpha[u]
            if cur == NEG_INF:
                continue
            for k in range(max_symbols_per_frame + 1):
                w = u + k
                if w > U:
                    break
                new[w] = _logaddexp(new[w], cur + lp[t, w, blank])
                if w < U:
                    cur = cur + lp[t, w, int(ids[w])]
        alpha = new
    return alpha[U]


def decode_many(fn: Callable, items: Sequence, threads: int = 1) -> list:
    """Apply ``fn`` to every item, optionally on a thread pool; order is preserved."""
    if threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def write_nbest(path: str | Path, results: Sequence[tuple[str, Sequence[BeamHypothesis]]], codec) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt_id, hyps in results:
            for rank, h in enumerate(hyps):
                rec = {
                    "utt_id": utt_id,
                    "rank": rank,
                    "text": codec.decode(h.tokens),
                    "log_t": h.log_t,
                    "log_lm": h.log_lm,
                    "log_ilm": h.log_ilm,
                    "combined": h.combined,
                }
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
