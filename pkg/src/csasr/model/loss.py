"""Transducer loss and the per-step scoring functions used by decoding."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .. import kernels
from .networks import DTYPE, NnlmModel, TransducerModel, as_features, as_ids, stacked_length


class _RnntLogLik(torch.autograd.Function):
    """log P(y | x) summed over the lattice; gradients come from forward-backward."""

    @staticmethod
    def forward(ctx, lp_blank, lp_emit, t_lens, u_lens):
        ll, g_blank, g_emit = kernels.rnnt_loglik_grad(
            lp_blank.detach().numpy(), lp_emit.detach().numpy(), t_lens, u_lens
        )
        ctx.save_for_backward(torch.from_numpy(g_blank), torch.from_numpy(g_emit))
        return torch.from_numpy(ll).to(lp_blank.dtype)

    @staticmethod
    def backward(ctx, grad):
        g_blank, g_emit = ctx.saved_tensors
        g = grad[:, None, None]
        return g * g_blank, g * g_emit, None, None


def lattice_loglik(lp_blank: torch.Tensor, lp_emit: torch.Tensor, t_lens, u_lens) -> torch.Tensor:
    """Differentiable lattice log-likelihood from gathered log-probabilities.

    Args:
        lp_blank: (B, T, U+1) blank log-probs per lattice node.
        lp_emit: (B, T, U) log-prob of the next reference label per node.
    """
    t_lens = np.asarray(t_lens, dtype=np.int64)
    u_lens = np.asarray(u_lens, dtype=np.int64)
    return _RnntLogLik.apply(lp_blank, lp_emit, t_lens, u_lens)


def pad_batch(feats: Sequence[np.ndarray], ids: Sequence[Sequence[int]]):
    B = len(feats)
    T = max(len(f) for f in feats)
    D = feats[0].shape[1]
    U = max((len(y) for y in ids), default=0)
    x = torch.zeros(B, T, D, dtype=DTYPE)
    y = torch.zeros(B, U, dtype=torch.long)
    for b, (f, seq) in enumerate(zip(feats, ids)):
        x[b, : len(f)] = as_features(f)
        if len(seq):
            y[b, : len(seq)] = as_ids(seq)
    return x, y


def batch_loss(model: TransducerModel, feats: Sequence[np.ndarray], ids: Sequence[Sequence[int]]) -> torch.Tensor:
    """Per-utterance negative log-likelihoods of a padded batch, shape (B,)."""
    for seq in ids:
        if model.blank_id in seq:
            raise ValueError("label sequence contains the blank id")
    x, y = pad_batch(feats, ids)
    t_lens = [stacked_length(len(f), model.config.frame_stack) for f in feats]
    u_lens = [len(s) for s in ids]
    enc = model.encode(x)
    pred = model.predict(y)
    logits = model.join(enc[:, :, None, :], pred[:, None, :, :])
    lp = torch.log_softmax(logits, dim=-1)
    lp_blank = lp[..., model.blank_id]
    U = y.shape[1]
    idx = y[:, None, :, None].expand(-1, lp.shape[1], -1, 1)
    lp_emit = torch.gather(lp[:, :, :U, :], 3, idx)[..., 0]
    return -lattice_loglik(lp_blank, lp_emit, t_lens, u_lens)


def transducer_loss(model: TransducerModel, x, y) -> torch.Tensor:
    """-log P(y | x), marginalised over every blank-interleaved alignment."""
    x = as_features(x)
    if x.dim() != 2 or x.shape[0] < 1:
        raise ValueError("features must be a non-empty (T, D) matrix")
    return batch_loss(model, [x], [list(as_ids(y).tolist())])[0]


def joint_log_probs(model: TransducerModel, x, y_prefix, t: int) -> torch.Tensor:
    """Log-distribution over the vocabulary (blank included) at lattice node (t, |y_prefix|)."""
    x = as_features(x)
    enc = model.encode(x)
    if not 0 <= t < enc.shape[0]:
        raise IndexError(f"frame {t} out of range for {enc.shape[0]} encoder frames")
    pred = model.predict(as_ids(y_prefix))[-1]
    return torch.log_softmax(model.join(enc[t], pred), dim=-1)


def _masked_logsoftmax(logits: torch.Tensor, blank_id: int) -> torch.Tensor:
    mask = torch.zeros(logits.shape[-1], dtype=logits.dtype)
    mask[blank_id] = float("-inf")
    return torch.log_softmax(logits + mask, dim=-1)


def ilm_step_log_probs(model: TransducerModel, y_prefixes_out: torch.Tensor) -> torch.Tensor:
    """ILM next-token log-probs from label-encoder outputs, blank excluded."""
    return _masked_logsoftmax(model.label_logits(y_prefixes_out), model.blank_id)


def ilm_log_prob(model: TransducerModel, y) -> float:
    """log P_ILM(y): zero-acoustic joiner, renormalised over non-blank labels."""
    ids = as_ids(y)
    if len(ids) == 0:
        return 0.0
    with torch.no_grad():
        pred = model.predict(ids)[:-1]
        lp = ilm_step_log_probs(model, pred)
        return float(lp.gather(1, ids[:, None]).sum())


def nnlm_log_prob(lm: NnlmModel, y) -> float:
    """log P_LM(y) as a sum of causal next-token log-probs from begin-of-sequence."""
    ids = as_ids(y)
    if len(ids) == 0:
        return 0.0
    if int(ids.min()) < 0 or int(ids.max()) >= lm.vocab_size:
        raise IndexError("token id out of vocabulary")
    if lm.blank_id in ids.tolist():
        raise ValueError("blank is not modelled by the external LM")
    with torch.no_grad():
        lp = lm(ids[None])[0, :-1]
        return float(lp.gather(1, ids[:, None]).sum())
