"""Desk-scale transducer (standard and simple joiner) and the external NNLM.

All modules run in float64. The acoustic encoder is either a unidirectional
GRU or a causal convolution over the current and preceding frames; both have
zero lookahead. The label encoder is a strictly causal GRU.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import nn

from ..corpus import TextCodec

GRU = "gru"
CONV = "conv"
ENCODERS = (GRU, CONV)
STANDARD = "standard"
SIMPLE = "simple_joiner"
VARIANTS = (STANDARD, SIMPLE)

DTYPE = torch.float64


@dataclass(frozen=True)
class TransducerConfig:
    feat_dim: int = 8
    frame_stack: int = 1
    enc_hidden: int = 48
    embed_dim: int = 32
    pred_hidden: int = 48
    joint_dim: int = 48
    variant: str = STANDARD
    encoder: str = GRU
    context: int = 3  # frames seen by the conv encoder (current + context-1 past)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.encoder not in ENCODERS:
            raise ValueError(f"encoder must be one of {ENCODERS}")
        if self.context < 1:
            raise ValueError("context must be >= 1")
        if self.frame_stack < 1:
            raise ValueError("frame_stack must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LmConfig:
    embed_dim: int = 32
    hidden: int = 48

    def to_dict(self) -> dict:
        return asdict(self)


def stack_frames(x: torch.Tensor, k: int) -> torch.Tensor:
    """(B, T, D) -> (B, ceil(T/k), k*D), zero-padding the tail."""
    if k == 1:
        return x
    B, T, D = x.shape
    pad = (-T) % k
    if pad:
        x = torch.cat([x, x.new_zeros(B, pad, D)], dim=1)
    return x.reshape(B, (T + pad) // k, k * D)


def stacked_length(T: int, k: int) -> int:
    return -(-T // k)


class AcousticEncoder(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.inp = nn.Linear(in_dim, hidden)
        self.rnn = nn.GRU(hidden, hidden, batch_first=True)
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = self.rnn(torch.tanh(self.inp(x)))
        return self.out(h)


class CausalConvEncoder(nn.Module):
    """Frame t sees frames t-context+1 .. t (left zero padding)."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, context: int):
        super().__init__()
        self.context = context
        self.conv = nn.Conv1d(in_dim, hidden, kernel_size=context)
        self.mid = nn.Linear(hidden, hidden)
        self.out = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = nn.functional.pad(x.transpose(1, 2), (self.context - 1, 0))
        h = torch.tanh(self.conv(h)).transpose(1, 2)
        return self.out(torch.tanh(self.mid(h)))


class LabelEncoder(nn.Module):
    """Causal GRU over a label history with a learned begin-of-sequence input.

    Output position u summarises labels y_1..y_u (position 0 is the empty
    history).
    """

    def __init__(self, vocab_size: int, embed_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.embed = nn.Embedding(vocab_size, embed_dim)
        self.bos = nn.Parameter(torch.zeros(embed_dim))
        self.rnn = nn.GRU(embed_dim, hidden, batch_first=True)
        self.out = nn.Linear(hidden, out_dim)
        self.hidden = hidden
        nn.init.normal_(self.bos, std=0.1)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, U) ids -> (B, U+1, out_dim)."""
        B = ids.shape[0]
        emb = self.embed(ids)
        bos = self.bos.expand(B, 1, -1)
        h, _ = self.rnn(torch.cat([bos, emb], dim=1))
        return self.out(h)

    def start(self, n: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Outputs and states for ``n`` empty histories."""
        h, state = self.rnn(self.bos.expand(n, 1, -1))
        return self.out(h[:, 0]), state

    def step(self, ids: torch.Tensor, state: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Advance ``n`` histories by one label each. state: (1, n, hidden)."""
        h, state = self.rnn(self.embed(ids)[:, None, :], state)
        return self.out(h[:, 0]), state


class TransducerModel(nn.Module):
    """Neural transducer over the bilingual union vocabulary.

    standard:       softmax(J(E_A(x, t) + E_L(y_1:u))), J = Linear-tanh-Linear
    simple_joiner:  softmax(Lin_A(E_A(x, t)) + Lin_L(E_L(y_1:u)))

    For the simple joiner the final linear layers of both encoders project
    straight to vocabulary logits, so ``encode``/``predict`` return the
    per-branch logits.
    """

    def __init__(self, codec: TextCodec, config: TransducerConfig = TransducerConfig(), seed: int = 0):
        super().__init__()
        self.codec = codec
        self.config = config
        self.vocab_size = len(codec.vocab)
        self.blank_id = codec.vocab.blank_id
        out_dim = self.vocab_size if config.variant == SIMPLE else config.joint_dim
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            in_dim = config.feat_dim * config.frame_stack
            if config.encoder == CONV:
                self.acoustic = CausalConvEncoder(in_dim, config.enc_hidden, out_dim, config.context)
            else:
                self.acoustic = AcousticEncoder(in_dim, config.enc_hidden, out_dim)
            self.label = LabelEncoder(self.vocab_size, config.embed_dim, config.pred_hidden, out_dim)
            if config.variant == STANDARD:
                self.joiner = nn.Sequential(
                    nn.Linear(config.joint_dim, config.joint_dim),
                    nn.Tanh(),
                    nn.Linear(config.joint_dim, self.vocab_size),
                )
            else:
                self.joiner = None
        self.to(DTYPE)

    @property
    def variant(self) -> str:
        return self.config.variant

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        """(B, T, D) or (T, D) features -> acoustic branch output per encoder frame."""
        squeeze = x.dim() == 2
        if squeeze:
            x = x[None]
        out = self.acoustic(stack_frames(x.to(DTYPE), self.config.frame_stack))
        return out[0] if squeeze else out

    def predict(self, ids: torch.Tensor) -> torch.Tensor:
        squeeze = ids.dim() == 1
        if squeeze:
            ids = ids[None]
        out = self.label(ids)
        return out[0] if squeeze else out

    def join(self, enc: torch.Tensor, pred: torch.Tensor) -> torch.Tensor:
        """Pre-softmax logits for broadcastable acoustic and label outputs."""
        if self.joiner is None:
            return enc + pred
        return self.joiner(enc + pred)

    def label_logits(self, pred: torch.Tensor) -> torch.Tensor:
        """Joiner output with the acoustic contribution replaced by zeros."""
        if self.joiner is None:
            return pred
        return self.joiner(pred)


class NnlmModel(nn.Module):
    """Causal LM mirroring the label encoder, with its own output projection.

    The blank index is masked out of every next-token distribution.
    """

    def __init__(self, codec: TextCodec, config: LmConfig = LmConfig(), seed: int = 0):
        super().__init__()
        self.codec = codec
        self.config = config
        self.vocab_size = len(codec.vocab)
        self.blank_id = codec.vocab.blank_id
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            self.core = LabelEncoder(self.vocab_size, config.embed_dim, config.hidden, config.hidden)
            self.proj = nn.Linear(config.hidden, self.vocab_size)
        mask = torch.zeros(self.vocab_size, dtype=DTYPE)
        mask[self.blank_id] = float("-inf")
        self.register_buffer("blank_mask", mask, persistent=False)
        self.to(DTYPE)

    def _logprobs(self, h: torch.Tensor) -> torch.Tensor:
        return torch.log_softmax(self.proj(h) + self.blank_mask, dim=-1)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """(B, U) ids -> (B, U+1, V) next-token log-probs; position u predicts y_{u+1}."""
        return self._logprobs(self.core(ids))

    def start(self, n: int):
        h, state = self.core.start(n)
        return self._logprobs(h), state

    def step(self, ids: torch.Tensor, state: torch.Tensor):
        h, state = self.core.step(ids, state)
        return self._logprobs(h), state


def as_features(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x.to(DTYPE)
    return torch.from_numpy(np.asarray(x, dtype=np.float64))


def as_ids(y) -> torch.Tensor:
    if isinstance(y, torch.Tensor):
        return y.long()
    return torch.tensor(list(y), dtype=torch.long)
