import json

import numpy as np
import pytest
import torch

from csasr.corpus import EN, ZH, Sentence, tokenize_mixed
from csasr.csgen import switch_points
from csasr.data import read_dataset
from csasr.decode import greedy_decode
from csasr.model.networks import CONV, SIMPLE, TransducerConfig, TransducerModel
from csasr.model.training import TrainConfig, train
from csasr.pipeline import build_codec
from csasr.testbed import (
    DET,
    CorpusSizes,
    WorldConfig,
    code_switch,
    make_corpora,
    make_world,
    realise,
    sample_concepts,
    synth_utterance,
    write_corpora,
)

SMALL = CorpusSizes(train=20, unlabeled=10, test=5, mixed=200, lm_text=30, parallel=40)


def test_world_is_deterministic_and_disjoint():
    a, b = make_world(WorldConfig(seed=4)), make_world(WorldConfig(seed=4))
    assert a.vocab_A == b.vocab_A and a.vocab_B == b.vocab_B
    assert all(np.array_equal(a.templates[w], b.templates[w]) for w in a.templates)
    assert not set(a.vocab_A) & set(a.vocab_B)
    assert make_world(WorldConfig(seed=5)).vocab_A != a.vocab_A
    assert all(1 <= len(t) <= 3 for t in a.templates.values())


def test_translation_is_pos_preserving_bijection():
    w = make_world(WorldConfig(seed=1))
    for en in w.vocab_A:
        if en == DET:
            continue
        zh = w.translate(en, ZH)
        assert w.pos[zh] == w.pos[en] and w.translate(zh, EN) == en


def test_zero_noise_is_concatenated_templates():
    w = make_world(WorldConfig(noise_sigma=0.0, seed=2))
    toks = [w.vocab_B[0], w.vocab_A[1], w.vocab_B[3]]
    feats, text = synth_utterance(w, toks, seed=9)
    assert np.array_equal(feats, np.concatenate([w.templates[t] for t in toks]))
    assert text == " ".join(toks)


def test_tail_frames_are_appended():
    w = make_world(WorldConfig(noise_sigma=0.0, tail_frames=2, seed=2))
    feats, _ = synth_utterance(w, [w.vocab_A[0]], seed=0)
    assert np.array_equal(feats[-2:], np.zeros((2, 8)))


def test_noise_seeded():
    w = make_world(WorldConfig(noise_sigma=0.3, seed=2))
    toks = [w.vocab_A[0]]
    a, _ = synth_utterance(w, toks, 1)
    b, _ = synth_utterance(w, toks, 1)
    c, _ = synth_utterance(w, toks, 2)
    assert np.array_equal(a, b) and not np.array_equal(a, c)


def test_unknown_token_and_bad_config():
    w = make_world(WorldConfig(seed=0))
    with pytest.raises(KeyError):
        synth_utterance(w, ["nope"], 0)
    with pytest.raises(ValueError):
        WorldConfig(noise_sigma=-1.0)
    with pytest.raises(ValueError):
        CorpusSizes(train=0)


def test_paired_zh_templates_are_close():
    w = make_world(WorldConfig(seed=3, zh_pair_spread=0.1))
    dists = []
    for a in w.vocab_B:
        d = [np.abs(w.templates[a] - w.templates[b]).max() for b in w.vocab_B
             if b != a and w.templates[b].shape == w.templates[a].shape]
        dists.append(min(d))
    assert max(dists) < 1.0


def test_realise_and_code_switch():
    w = make_world(WorldConfig(seed=0))
    rng = np.random.default_rng(0)
    for _ in range(200):
        con = sample_concepts(w, rng)
        en, en_tags, _ = realise(w, con, EN, det=True)
        zh, zh_tags, _ = realise(w, con, ZH, det=True)
        assert DET in en and DET not in zh
        assert [t for t in en_tags if t != "DET"] == zh_tags
        assert con.noun in w.verb_nouns[con.verb]
        for phrase in (False, True):
            cs = code_switch(w, con, ZH, phrase, rng)
            sent = Sentence.from_surfaces(cs)
            assert 1 <= switch_points(sent.tokens) <= 2
            assert any(t.lang == EN for t in sent.tokens)


def test_corpora_shape_and_constraints():
    w = make_world(WorldConfig(seed=0))
    c = make_corpora(w, SMALL, seed=11)
    for lang in (EN, ZH):
        for pool in (c.train[lang], c.test[lang]):
            assert all({t.lang for t in tokenize_mixed(u.transcript).tokens} == {lang} for u in pool)
        assert all(u.transcript == "" for u in c.unlabeled[lang])
        assert len(c.unlabeled_refs[lang]) == SMALL.unlabeled
    hist = c.meta["mixed_switch_hist"]
    assert set(hist) <= {1, 2}
    assert c.meta["mixed_single_sub"] / SMALL.mixed >= 0.5
    for p in c.parallel:
        assert len(p.src_pos) == len(p.src) and len(p.tgt_pos) == len(p.tgt)
        assert all(w.pos[t] == tag for t, tag in zip(p.src.surfaces + p.tgt.surfaces, p.src_pos + p.tgt_pos))
    again = make_corpora(w, SMALL, seed=11)
    assert [u.transcript for u in again.mixed] == [u.transcript for u in c.mixed]
    assert all(np.array_equal(a.features, b.features) for a, b in zip(again.mixed, c.mixed))


def test_monolingual_mixed_share():
    w = make_world(WorldConfig(seed=0))
    c = make_corpora(w, SMALL, cs_fraction_for_eval=0.0, seed=1)
    assert all(len({t.lang for t in tokenize_mixed(u.transcript).tokens}) == 1 for u in c.mixed)


def test_write_corpora_round_trip(tmp_path):
    w = make_world(WorldConfig(seed=0))
    c = make_corpora(w, CorpusSizes(train=3, unlabeled=2, test=2, mixed=3, lm_text=4, parallel=3), seed=0)
    write_corpora(tmp_path, w, c)
    back = read_dataset(tmp_path / "train.EN.jsonl")
    assert [u.transcript for u in back] == [u.transcript for u in c.train[EN]]
    assert all(np.array_equal(a.features, b.features) for a, b in zip(back, c.train[EN]))
    assert (tmp_path / "mixed.refs.txt").read_text(encoding="utf-8").splitlines() == [u.transcript for u in c.mixed]
    world = json.loads((tmp_path / "world.json").read_text(encoding="utf-8"))
    assert world["vocab"][ZH] == list(w.vocab_B)


def test_closed_loop_zero_noise_training():
    w = make_world(WorldConfig(noise_sigma=0.0, tail_frames=2, seed=0))
    c = make_corpora(w, CorpusSizes(train=40, unlabeled=1, test=1, mixed=1, lm_text=40, parallel=1), seed=0)
    codec = build_codec(c, 50)
    model = TransducerModel(codec, TransducerConfig(enc_hidden=64, pred_hidden=64, variant=SIMPLE, encoder=CONV),
                            seed=0)
    data = c.train[EN] + c.train[ZH]
    losses = train(model, data, TrainConfig(lr=3e-3, epochs=60, batch_size=8, lr_decay=1.0)).losses
    assert losses[-1] < 0.1
    hit = total = 0
    for u in data:
        ref = codec.encode(u.transcript)
        hyp = greedy_decode(model, u.features)
        hit += sum(a == b for a, b in zip(ref, hyp)) if len(ref) == len(hyp) else 0
        total += len(ref)
    assert hit / total >= 0.95
