import itertools
import math

import numpy as np
import pytest
import torch

from csasr.corpus import TextCodec, build_union_vocab, tokenize_mixed, train_bpe
from csasr.model.networks import SIMPLE, STANDARD, LmConfig, NnlmModel, TransducerConfig, TransducerModel

torch.set_num_threads(1)

EN_WORDS = ["ab", "cd", "ef", "gh"]
ZH_CHARS = "我你他她"


def make_codec(n_en: int = 1, n_zh: int = 1) -> TextCodec:
    """Codec whose vocabulary is blank plus ``n_en`` whole EN words and ``n_zh`` ZH chars."""
    words = EN_WORDS[:n_en]
    bpe = train_bpe([tokenize_mixed(" ".join(words))], num_merges=10 * n_en)
    # merge until every word is a single unit
    assert all(len(bpe.encode(w)) == 1 for w in words), "tiny BPE did not fully merge"
    return TextCodec(bpe, build_union_vocab(words, ZH_CHARS[:n_zh]))


def tiny_model(variant=STANDARD, seed=0, codec=None, **kw) -> TransducerModel:
    cfg = TransducerConfig(feat_dim=3, enc_hidden=5, embed_dim=4, pred_hidden=5, joint_dim=5, variant=variant, **kw)
    return TransducerModel(codec or make_codec(), cfg, seed=seed)


def tiny_lm(seed=0, codec=None) -> NnlmModel:
    return NnlmModel(codec or make_codec(), LmConfig(embed_dim=4, hidden=5), seed=seed)


def alignments(T: int, U: int):
    """Every lattice path as a per-frame tuple of emitted-label counts (sum U, each frame then a blank)."""
    for counts in itertools.product(range(U + 1), repeat=T):
        if sum(counts) == U:
            yield counts


def logsumexp(xs):
    xs = [x for x in xs if x != -math.inf]
    if not xs:
        return -math.inf
    m = max(xs)
    return m + math.log(sum(math.exp(x - m) for x in xs))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)




ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(num: int, ok: bool, detail: str) -> None:
    """Store the one-line verdict for an acceptance criterion (printed in the terminal summary)."""
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[num] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[num])
