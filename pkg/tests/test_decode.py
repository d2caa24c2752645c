import itertools
import math

import numpy as np
import pytest
import torch

from csasr.decode import DecodeError, FusionConfig, beam_search, capped_marginal, decode_many, fused, greedy_decode
from csasr.model.loss import ilm_log_prob, nnlm_log_prob
from conftest import SIMPLE, STANDARD, alignments, logsumexp, make_codec, tiny_lm, tiny_model

WIDE = 10_000


def path_marginal(model, x, y, cap):
    """log-sum over per-frame emission counts (each <= cap) of the path probabilities."""
    T = x.shape[0]
    with torch.no_grad():
        enc = model.encode(torch.as_tensor(x))
        pred = model.predict(torch.tensor(y, dtype=torch.long))
        lp = torch.log_softmax(model.join(enc[:, None], pred[None]), -1).numpy()
    paths = []
    for counts in alignments(T, len(y)):
        if max(counts) > cap:
            continue
        s, u = 0.0, 0
        for t, c in enumerate(counts):
            for _ in range(c):
                s += lp[t, u, y[u]]
                u += 1
            s += lp[t, u, model.blank_id]
        paths.append(s)
    return logsumexp(paths)


def all_sequences(labels, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(labels, repeat=n)


def oracle(model, lm, x, cfg):
    """Best label sequence under the fused objective by full enumeration (same tie-break)."""
    labels = [v for v in range(model.vocab_size) if v != model.blank_id]
    best = None
    for y in all_sequences(labels, cfg.max_symbols_per_frame * x.shape[0]):
        lt = path_marginal(model, x, list(y), cfg.max_symbols_per_frame)
        if lt == -math.inf:
            continue
        llm = nnlm_log_prob(lm, y) if lm is not None else 0.0
        score = fused(lt, llm, ilm_log_prob(model, y), cfg)
        key = (-score, len(y), y)
        if best is None or key < best[0]:
            best = (key, score)
    return best[0][2], best[1]


@pytest.mark.parametrize("variant", [STANDARD, SIMPLE])
def test_exhaustive_beam_is_optimal(variant):
    rng = np.random.default_rng(0)
    for inst in range(6):
        model = tiny_model(variant, seed=inst)
        lm = tiny_lm(seed=100 + inst)
        x = rng.normal(size=(int(rng.integers(1, 4)), 3)) * 2
        for lam_lm, lam_ilm in itertools.product((0.0, 0.25), (0.0, 0.2)):
            cfg = FusionConfig(lam_lm, lam_ilm, beam_size=WIDE, max_symbols_per_frame=2)
            hyp = beam_search(model, lm, x, cfg)[0]
            y, score = oracle(model, lm, x, cfg)
            assert hyp.tokens == y
            assert hyp.combined == pytest.approx(score, abs=1e-9)


def test_nbest_scores_are_exact_marginals():
    rng = np.random.default_rng(1)
    model = tiny_model(STANDARD, seed=7)
    x = rng.normal(size=(3, 3))
    cfg = FusionConfig(0.0, 0.0, beam_size=WIDE, max_symbols_per_frame=2)
    hyps = beam_search(model, None, x, cfg)
    for h in hyps:
        assert h.log_t == pytest.approx(path_marginal(model, x, list(h.tokens), 2), abs=1e-9)
    # every sequence with at most 2 labels per frame survives an unpruned beam
    assert {h.tokens for h in hyps} == set(all_sequences([1, 2], 6))


def test_zero_weights_equal_plain_search():
    rng = np.random.default_rng(2)
    for inst in range(5):
        model = tiny_model(SIMPLE, seed=inst, codec=make_codec(2, 2))
        lm = tiny_lm(seed=inst, codec=model.codec)
        x = rng.normal(size=(5, 3))
        cfg = FusionConfig(0.0, 0.0, beam_size=4)
        a = beam_search(model, lm, x, cfg)
        b = beam_search(model, None, x, cfg)
        assert [h.tokens for h in a] == [h.tokens for h in b]
        assert [h.log_t for h in a] == [h.log_t for h in b]


def test_greedy_equals_width_one_beam():
    rng = np.random.default_rng(3)
    for inst in range(20):
        model = tiny_model(STANDARD if inst % 2 else SIMPLE, seed=inst, codec=make_codec(2, 2))
        x = rng.normal(size=(int(rng.integers(1, 8)), 3)) * 2
        beam = beam_search(model, None, x, FusionConfig(0.0, 0.0, beam_size=1))[0]
        assert greedy_decode(model, x) == list(beam.tokens)


def test_capped_marginal_matches_enumeration():
    rng = np.random.default_rng(4)
    model = tiny_model(STANDARD, seed=2)
    x = rng.normal(size=(3, 3))
    for y in ([], [1], [2, 1], [1, 1, 2, 2]):
        for cap in (1, 2, 3):
            assert capped_marginal(model, x, y, cap) == pytest.approx(path_marginal(model, x, y, cap), abs=1e-10)
    # without a binding cap it is the full transducer likelihood
    from csasr.model.loss import transducer_loss

    assert capped_marginal(model, x, [2, 1], 2) == pytest.approx(-transducer_loss(model, x, [2, 1]).item(), abs=1e-10)


def test_sorted_and_length_limited():
    rng = np.random.default_rng(5)
    model = tiny_model(SIMPLE, seed=3)
    lm = tiny_lm()
    x = rng.normal(size=(4, 3))
    hyps = beam_search(model, lm, x, FusionConfig(beam_size=5, max_symbols_per_frame=1))
    assert len(hyps) <= 5
    assert [h.combined for h in hyps] == sorted((h.combined for h in hyps), reverse=True)
    assert all(len(h.tokens) <= 4 for h in hyps)
    for h in hyps:
        assert h.log_lm == pytest.approx(nnlm_log_prob(lm, h.tokens), abs=1e-9)
        assert h.log_ilm == pytest.approx(ilm_log_prob(model, h.tokens), abs=1e-9)


def test_lm_weight_needs_lm():
    with pytest.raises(ValueError):
        beam_search(tiny_model(), None, np.zeros((2, 3)), FusionConfig(lambda_lm=0.5))


def test_fusion_config_validation():
    with pytest.raises(ValueError):
        FusionConfig(beam_size=0)
    with pytest.raises(ValueError):
        FusionConfig(max_symbols_per_frame=0)
    with pytest.raises(ValueError):
        FusionConfig(lambda_lm=math.nan)


def test_non_finite_scores_raise():
    model = tiny_model()
    with torch.no_grad():
        next(model.acoustic.parameters()).fill_(math.nan)
    with pytest.raises(DecodeError) as err:
        beam_search(model, None, np.ones((2, 3)), FusionConfig(0.0, 0.0))
    assert err.value.frame == 0


def test_decode_many_threads_preserve_order():
    model = tiny_model(SIMPLE, codec=make_codec(2, 2))
    rng = np.random.default_rng(6)
    xs = [rng.normal(size=(4, 3)) for _ in range(8)]
    fn = lambda x: beam_search(model, None, x, FusionConfig(0.0, 0.0, beam_size=3))[0].tokens  # noqa: E731
    assert decode_many(fn, xs, threads=1) == decode_many(fn, xs, threads=4)
