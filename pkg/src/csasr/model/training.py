"""Training loops, ratio-mixed batch sampling and the two-stage SSL pipeline."""
from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch

from ..corpus import EN, ZH
from ..data import Utterance
from .loss import batch_loss
from .networks import NnlmModel, TransducerConfig, TransducerModel

log = logging.getLogger(__name__)

PRETRAIN_LR = 1e-4
FINETUNE_LR = 2.5e-4
LR_DECAY = 0.96
CLIP_NORM = 5.0


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, value: float):
        self.epoch, self.batch, self.value = epoch, batch, value
        super().__init__(f"non-finite loss {value} at epoch {epoch}, batch {batch}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = FINETUNE_LR
    epochs: int = 10
    batch_size: int = 16
    lr_decay: float = LR_DECAY
    clip_norm: float = CLIP_NORM
    seed: int = 0

    @classmethod
    def pretrain(cls, **kw) -> "TrainConfig":
        return cls(lr=kw.pop("lr", PRETRAIN_LR), **kw)

    @classmethod
    def finetune(cls, **kw) -> "TrainConfig":
        return cls(lr=kw.pop("lr", FINETUNE_LR), **kw)


@dataclass
class TrainResult:
    model: torch.nn.Module
    losses: list[float]


@dataclass(frozen=True)
class MixRatioSchedule:
    """``a`` percent of each batch is EN, the rest ZH (Table notation ZH:EN = (100-a):a)."""

    a: float
    stage: str = "pretrain"

    def __post_init__(self):
        if not 0 <= self.a <= 100:
            raise ValueError("a must be within [0, 100]")

    @classmethod
    def from_ratio(cls, zh: float, en: float, stage: str = "pretrain") -> "MixRatioSchedule":
        return cls(100.0 * en / (zh + en), stage)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def en_count(a: float, batch_size: int) -> int:
    return _round_half_up(a / 100.0 * batch_size)


def sample_batch(
    pools: Mapping[str, Sequence], sched: MixRatioSchedule, batch_size: int, seed: int
) -> list:
    """One batch with round(a% * batch_size) EN items, the rest ZH, drawn without replacement."""
    n_en = en_count(sched.a, batch_size)
    n_zh = batch_size - n_en
    en, zh = pools.get(EN, ()), pools.get(ZH, ())
    if n_en and not en:
        raise ValueError("EN pool is empty but the schedule asks for EN examples")
    if n_zh and not zh:
        raise ValueError("ZH pool is empty but the schedule asks for ZH examples")
    rng = np.random.default_rng(seed)
    out = []
    for pool, n in ((en, n_en), (zh, n_zh)):
        if n:
            idx = rng.choice(len(pool), size=n, replace=n > len(pool))
            out.extend(pool[int(i)] for i in idx)
    return out


class MixedBatchSampler:
    """Epoch-wise batches mixed at ratio ``a``.

    Each pool is consumed as a shuffled pass without replacement and
    reshuffled when exhausted. EN counts per batch are floor or ceil of
    a% * batch_size, with the remainder carried across batches so the
    long-run EN fraction is exactly a%.
    """

    def __init__(self, pools: Mapping[str, Sequence], sched: MixRatioSchedule, batch_size: int, seed: int,
                 steps_per_epoch: int | None = None):
        self.pools = {EN: list(pools.get(EN, ())), ZH: list(pools.get(ZH, ()))}
        if sched.a > 0 and not self.pools[EN]:
            raise ValueError("EN pool is empty but the schedule asks for EN examples")
        if sched.a < 100 and not self.pools[ZH]:
            raise ValueError("ZH pool is empty but the schedule asks for ZH examples")
        self.sched = sched
        self.batch_size = batch_size
        self.rng = np.random.default_rng(seed)
        total = sum(len(p) for p in self.pools.values())
        self.steps_per_epoch = steps_per_epoch or max(1, math.ceil(total / batch_size))
        self._order = {k: [] for k in self.pools}
        self._carry = 0.0

    def _draw(self, lang: str, n: int) -> list:
        out = []
        while len(out) < n:
            if not self._order[lang]:
                self._order[lang] = list(self.rng.permutation(len(self.pools[lang])))
            out.append(self.pools[lang][int(self._order[lang].pop())])
        return out

    def next_batch(self) -> list:
        want = self.sched.a / 100.0 * self.batch_size + self._carry
        n_en = min(self.batch_size, max(0, int(math.floor(want + 1e-9))))
        self._carry = want - n_en
        return self._draw(EN, n_en) + self._draw(ZH, self.batch_size - n_en)

    def epoch(self):
        for _ in range(self.steps_per_epoch):
            yield self.next_batch()


def _list_batches(items: Sequence, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(len(items))
    for s in range(0, len(items), batch_size):
        yield [items[int(i)] for i in order[s : s + batch_size]]


def _run(model, params, epoch_batches: Callable[[int], object], step_loss, config: TrainConfig, what: str):
    if config.epochs == 0:
        return []
    opt = torch.optim.Adam(params, lr=config.lr)
    sched = torch.optim.lr_scheduler.ExponentialLR(opt, gamma=config.lr_decay)
    losses = []
    model.train()
    for epoch in range(config.epochs):
        total, count = 0.0, 0
        for b, batch in enumerate(epoch_batches(epoch)):
            loss_vec = step_loss(batch)
            loss = loss_vec.mean()
            value = float(loss.detach())
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(params, config.clip_norm)
            opt.step()
            total += float(loss_vec.detach().sum())
            count += len(loss_vec)
        losses.append(total / count)
        sched.step()
        log.info("%s epoch %d loss %.4f", what, epoch + 1, losses[-1])
    model.eval()
    return losses


def _encoded(model: TransducerModel, utts: Sequence[Utterance]) -> list[tuple[np.ndarray, list[int]]]:
    return [(u.features, model.codec.encode(u.transcript)) for u in utts]


def train(
    model: TransducerModel,
    data: Sequence[Utterance] | Mapping[str, Sequence[Utterance]],
    config: TrainConfig = TrainConfig(),
    mix: MixRatioSchedule | None = None,
) -> TrainResult:
    """Adam with per-epoch exponential lr decay and global-norm clipping.

    ``data`` is a list of utterances, or per-language pools when ``mix`` is
    given. Returns the model (trained in place) and per-epoch mean losses.
    """
    torch.manual_seed(config.seed)
    params = [p for p in model.parameters() if p.requires_grad]
    if mix is None:
        if not data:
            raise ValueError("empty training set")
        items = _encoded(model, data)
        rng = np.random.default_rng(config.seed)
        epoch_batches = lambda e: _list_batches(items, config.batch_size, rng)  # noqa: E731
    else:
        pools = {lang: _encoded(model, utts) for lang, utts in data.items()}
        sampler = MixedBatchSampler(pools, mix, config.batch_size, config.seed)
        epoch_batches = lambda e: sampler.epoch()  # noqa: E731

    def step_loss(batch):
        return batch_loss(model, [f for f, _ in batch], [y for _, y in batch])

    losses = _run(model, params, epoch_batches, step_loss, config, "transducer")
    return TrainResult(model, losses)


def lm_batch_loss(lm: NnlmModel, seqs: Sequence[Sequence[int]]) -> torch.Tensor:
    """Per-sequence negative log-likelihood (sum over tokens)."""
    U = max(len(s) for s in seqs)
    y = torch.zeros(len(seqs), U, dtype=torch.long)
    mask = torch.zeros(len(seqs), U, dtype=torch.bool)
    for b, s in enumerate(seqs):
        y[b, : len(s)] = torch.tensor(s, dtype=torch.long)
        mask[b, : len(s)] = True
    lp = lm(y)[:, :-1]
    tok = lp.gather(2, y[..., None])[..., 0]
    # padding reads the masked blank (-inf), so select rather than multiply
    return -torch.where(mask, tok, torch.zeros_like(tok)).sum(dim=1)


def train_lm(lm: NnlmModel, texts: Sequence[str], config: TrainConfig = TrainConfig()) -> TrainResult:
    """Next-token cross-entropy training; also used for fine-tuning a copy."""
    seqs = [ids for ids in (lm.codec.encode(t) for t in texts) if ids]
    if not seqs:
        raise ValueError("no non-empty LM training sentences")
    torch.manual_seed(config.seed)
    params = list(lm.parameters())
    rng = np.random.default_rng(config.seed)
    losses = _run(
        lm, params, lambda e: _list_batches(seqs, config.batch_size, rng),
        lambda batch: lm_batch_loss(lm, batch), config, "nnlm",
    )
    return TrainResult(lm, losses)


# --------------------------------------------------------------------------- SSL


@dataclass
class PseudoLabelStats:
    kept: int = 0
    dropped_empty: int = 0


def pseudo_label(teacher: TransducerModel, unlabeled: Sequence[Utterance], threads: int = 1):
    """Greedy-decode each utterance with ``teacher`` and attach the text as its transcript.

    Utterances whose decode is empty are dropped and counted.

    Returns:
        (labelled utterances, PseudoLabelStats)
    """
    from ..decode import decode_many, greedy_decode

    stats = PseudoLabelStats()
    hyps = decode_many(lambda u: greedy_decode(teacher, u.features), unlabeled, threads)
    out = []
    for utt, ids in zip(unlabeled, hyps):
        if not ids:
            stats.dropped_empty += 1
            continue
        stats.kept += 1
        out.append(utt.with_transcript(teacher.codec.decode(ids)))
    return out, stats


@dataclass
class SslResult:
    model: TransducerModel
    pretrain_losses: list[float]
    finetune_losses: list[float]
    pseudo_stats: dict = field(default_factory=dict)


def ssl_pipeline(
    unlabeled: Mapping[str, Sequence[Utterance]],
    supervised: Mapping[str, Sequence[Utterance]],
    a_pretrain: float,
    pretrain_config: TrainConfig,
    finetune_config: TrainConfig,
    teacher: TransducerModel,
    model_config: TransducerConfig | None = None,
    seed: int = 0,
    pseudo_labeled: Mapping[str, Sequence[Utterance]] | None = None,
) -> SslResult:
    """Pretrain from random init on teacher transcripts mixed at ``a_pretrain``% EN,
    then fine-tune on all supervised data.

    ``pseudo_labeled`` lets callers reuse transcripts already produced by the
    same teacher across several ratios.
    """
    stats = {}
    if pseudo_labeled is None:
        pseudo_labeled = {}
        for lang, utts in unlabeled.items():
            labelled, st = pseudo_label(teacher, utts)
            pseudo_labeled[lang] = labelled
            stats[lang] = vars(st)
    cfg = model_config or teacher.config
    student = TransducerModel(teacher.codec, cfg, seed=seed)
    mix = MixRatioSchedule(a_pretrain, "pretrain")
    pre = train(student, pseudo_labeled, pretrain_config, mix=mix)
    log.info("ssl a=%s pretrain done (%d epochs)", a_pretrain, len(pre.losses))
    sup = [u for lang in sorted(supervised) for u in supervised[lang]]
    fine = train(student, sup, finetune_config) if finetune_config.epochs else TrainResult(student, [])
    log.info("ssl a=%s finetune done (%d epochs)", a_pretrain, len(fine.losses))
    return SslResult(student, pre.losses, fine.losses, stats)


def clone(model: torch.nn.Module) -> torch.nn.Module:
    return copy.deepcopy(model)


__all__ = [
    "TrainConfig",
    "TrainResult",
    "MixRatioSchedule",
    "MixedBatchSampler",
    "sample_batch",
    "train",
    "train_lm",
    "pseudo_label",
    "ssl_pipeline",
    "clone",
]
