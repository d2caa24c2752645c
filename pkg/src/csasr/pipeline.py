"""End-to-end run on the synthetic testbed.

world -> codec -> supervised baseline and pseudo-label teacher -> SSL ratio
sweep -> alignment + CS text generation -> NNLM training and CS fine-tuning ->
simple-joiner encoder recall -> fused decoding -> reports.

Every stage seed is derived from the run seed and the stage name, so a run is
a pure function of its config.
"""
from __future__ import annotations

import logging
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .align import align_pair, train_aligner
from .config import to_dict
from .corpus import EN, ZH, TextCodec, build_union_vocab, tokenize_mixed, train_bpe
from .csgen import GenConfig, generate_corpus
from .decode import FusionConfig, beam_search, decode_many, greedy_decode
from .evaluation import RecallConfig, corpus_mer, encoder_recall, minor_language, significance, write_json
from .model.loss import nnlm_log_prob
from .model.networks import CONV, SIMPLE, LmConfig, NnlmModel, TransducerConfig, TransducerModel
from .model.training import TrainConfig, clone, pseudo_label, ssl_pipeline, train, train_lm
from .testbed import CorpusSizes, WorldConfig, make_corpora, make_world

log = logging.getLogger(__name__)

RATIOS = (0.0, 25.0, 50.0, 75.0, 100.0)


def derive_seed(seed: int, stage: str) -> int:
    """Stage seed: first word of SeedSequence([seed, crc32(stage)]), kept below 2**31."""
    ss = np.random.SeedSequence([seed, zlib.crc32(stage.encode())])
    return int(ss.generate_state(1)[0] & 0x7FFFFFFF)


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    world: WorldConfig = WorldConfig(noise_sigma=0.25, zh_pair_spread=0.35, tail_frames=2)
    sizes: CorpusSizes = CorpusSizes(train=60, unlabeled=300, test=50, mixed=200, lm_text=2000, parallel=500,
                                     teacher_train=300)
    cs_fraction_for_eval: float = 1.0
    single_sub_fraction: float = 0.6
    zh_matrix_fraction: float = 0.8
    bpe_merges: int = 200
    model: TransducerConfig = TransducerConfig(enc_hidden=96, pred_hidden=96, variant=SIMPLE, encoder=CONV)
    lm: LmConfig = LmConfig()
    supervised: TrainConfig = TrainConfig(lr=3e-3, epochs=100, batch_size=8, lr_decay=1.0)
    teacher: TrainConfig = TrainConfig(lr=3e-3, epochs=20, batch_size=8, lr_decay=1.0)
    pretrain: TrainConfig = TrainConfig(lr=3e-3, epochs=15, batch_size=8, lr_decay=1.0)
    finetune: TrainConfig = TrainConfig(lr=1e-3, epochs=10, batch_size=8, lr_decay=0.96)
    lm_train: TrainConfig = TrainConfig(lr=3e-3, epochs=5, batch_size=32, lr_decay=1.0)
    lm_finetune: TrainConfig = TrainConfig(lr=1e-3, epochs=3, batch_size=32, lr_decay=1.0)
    ratios: tuple[float, ...] = RATIOS
    align_iterations: int = 5
    gen_mode: str = "token-or-phrase"
    fusion: FusionConfig = FusionConfig()
    resamples: int = 2000
    threads: int = 1


@dataclass
class PipelineResult:
    report: dict
    recall_rows: list[list]
    hyps: dict[str, list[str]] = field(default_factory=dict)
    models: dict[str, torch.nn.Module] = field(default_factory=dict)


def _seeded(cfg: TrainConfig, seed: int) -> TrainConfig:
    return replace(cfg, seed=seed)


def _mer_of(model, utts, threads) -> tuple[float, list[str]]:
    hyps = decode_many(lambda u: model.codec.decode(greedy_decode(model, u.features)), utts, threads)
    rep = corpus_mer(zip([u.transcript for u in utts], hyps))
    return rep.mer, hyps


def _mer_block(model, corpora, threads) -> tuple[dict, list[str]]:
    mixed, hyps = _mer_of(model, corpora.mixed, threads)
    return {"mixed": mixed, EN: _mer_of(model, corpora.test[EN], threads)[0],
            ZH: _mer_of(model, corpora.test[ZH], threads)[0]}, hyps


def build_codec(corpora, bpe_merges: int) -> TextCodec:
    en_text = corpora.lm_text[EN] + [u.transcript for u in corpora.train[EN]]
    bpe = train_bpe([tokenize_mixed(t) for t in en_text], bpe_merges, lang=EN)
    zh_text = corpora.lm_text[ZH] + [u.transcript for u in corpora.train[ZH]]
    zh_chars = sorted({t.surface for s in zh_text for t in tokenize_mixed(s).tokens if t.lang == ZH})
    return TextCodec(bpe, build_union_vocab(bpe, zh_chars))


def run(cfg: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Run every stage and return the report dictionary (no files written)."""
    torch.set_num_threads(1)
    t0 = time.perf_counter()
    s = cfg.seed
    world = make_world(replace(cfg.world, seed=derive_seed(s, "world")))
    corpora = make_corpora(world, cfg.sizes, cfg.cs_fraction_for_eval, cfg.single_sub_fraction,
                           cfg.zh_matrix_fraction, seed=derive_seed(s, "corpora"))
    codec = build_codec(corpora, cfg.bpe_merges)
    minor = Counter(minor_language(tokenize_mixed(u.transcript)) for u in corpora.mixed)
    report: dict = {"seed": s, "vocab_size": len(codec.vocab),
                    "mixed_set": {**corpora.meta, "minor_language": dict(sorted(minor.items()))}}
    hyps: dict[str, list[str]] = {}
    models: dict[str, torch.nn.Module] = {}
    supervised = {EN: corpora.train[EN], ZH: corpora.train[ZH]}
    sup_list = supervised[EN] + supervised[ZH]

    log.info("training supervised baseline")
    baseline = TransducerModel(codec, cfg.model, seed=derive_seed(s, "baseline-init"))
    train(baseline, sup_list, _seeded(cfg.supervised, derive_seed(s, "baseline-train")))
    report["baseline"], hyps["baseline"] = _mer_block(baseline, corpora, cfg.threads)

    teacher = baseline
    if corpora.teacher_train:
        log.info("training pseudo-label teacher on %d extra utterances",
                 sum(len(v) for v in corpora.teacher_train.values()))
        teacher = TransducerModel(codec, cfg.model, seed=derive_seed(s, "teacher-init"))
        teacher_data = sup_list + corpora.teacher_train[EN] + corpora.teacher_train[ZH]
        train(teacher, teacher_data, _seeded(cfg.teacher, derive_seed(s, "teacher-train")))
        report["teacher"], _ = _mer_block(teacher, corpora, cfg.threads)

    log.info("pseudo-labelling unlabeled pools")
    pseudo, pl_stats = {}, {}
    for lang in (EN, ZH):
        pseudo[lang], st = pseudo_label(teacher, corpora.unlabeled[lang], cfg.threads)
        pl_stats[lang] = {"kept": st.kept, "dropped_empty": st.dropped_empty,
                          "mer": corpus_mer(zip(corpora.unlabeled_refs[lang],
                                                _pseudo_texts(pseudo[lang], corpora.unlabeled[lang]))).mer}
    report["pseudo_labels"] = pl_stats

    ssl = {}
    for a in cfg.ratios:
        log.info("ssl ratio a=%s", a)
        res = ssl_pipeline(
            corpora.unlabeled, supervised, a,
            _seeded(cfg.pretrain, derive_seed(s, f"ssl-pretrain-{a:g}")),
            _seeded(cfg.finetune, derive_seed(s, f"ssl-finetune-{a:g}")),
            teacher=teacher, model_config=cfg.model, seed=derive_seed(s, f"ssl-init-{a:g}"),
            pseudo_labeled=pseudo,
        )
        ssl[f"{100 - a:g}:{a:g}"], _ = _mer_block(res.model, corpora, cfg.threads)
        models[f"ssl-{a:g}"] = res.model
    report["ssl"] = ssl

    log.info("aligning parallel corpus and generating CS text")
    aligner = train_aligner(corpora.parallel, cfg.align_iterations)
    aligned = [align_pair(aligner, p) for p in corpora.parallel]
    gen = GenConfig(mode=cfg.gen_mode)
    cs_zh = generate_corpus(aligned, gen)
    cs_en = generate_corpus([p.swapped() for p in aligned], gen)
    cs_text = [c.text for c in cs_zh + cs_en]
    report["align"] = {"loglik": list(aligner.loglik_history)}
    report["generated"] = {"zh_matrix": len(cs_zh), "en_matrix": len(cs_en)}

    log.info("training NNLMs")
    lm_text = corpora.lm_text[EN] + corpora.lm_text[ZH]
    lm_mono = NnlmModel(codec, cfg.lm, seed=derive_seed(s, "lm-init"))
    train_lm(lm_mono, lm_text, _seeded(cfg.lm_train, derive_seed(s, "lm-train")))
    lm_cs = clone(lm_mono)
    train_lm(lm_cs, cs_text, _seeded(cfg.lm_finetune, derive_seed(s, "lm-finetune")))
    refs = [u.transcript for u in corpora.mixed]
    report["lm_mixed_logprob"] = {
        "mono": float(np.mean([nnlm_log_prob(lm_mono, codec.encode(r)) for r in refs])),
        "cs": float(np.mean([nnlm_log_prob(lm_cs, codec.encode(r)) for r in refs])),
    }

    log.info("simple-joiner recall")
    if cfg.model.variant == SIMPLE:
        sj = baseline
    else:
        sj = TransducerModel(codec, replace(cfg.model, variant=SIMPLE), seed=derive_seed(s, "sj-init"))
        train(sj, sup_list, _seeded(cfg.supervised, derive_seed(s, "sj-train")))
    items = [(u.features, u.transcript) for u in corpora.mixed]
    rc = RecallConfig()
    rec_mono = encoder_recall(sj, items, lm_mono, rc)
    rec_cs = encoder_recall(sj, items, lm_cs, rc)
    report["recall"] = {"E_A": rec_mono.to_dict()["E_A"], "E_L": rec_mono.to_dict()["E_L"],
                        "NNLM": rec_mono.to_dict()["NNLM"], "NNLM_CS": rec_cs.to_dict()["NNLM"],
                        **rec_mono.meta()}
    recall_rows = [[n, rec_mono.recall["E_A"][n], rec_mono.recall["E_L"][n], rec_mono.recall["NNLM"][n],
                    rec_cs.recall["NNLM"][n]] for n in rc.n_values]

    log.info("fused decoding of the mixed set")
    fusion = {}
    for name, lm, fc in (
        ("no_lm", None, replace(cfg.fusion, lambda_lm=0.0, lambda_ilm=0.0)),
        ("lm_mono", lm_mono, cfg.fusion),
        ("lm_cs", lm_cs, cfg.fusion),
    ):
        out = decode_many(lambda u: beam_search(baseline, lm, u.features, fc)[0].tokens, corpora.mixed, cfg.threads)
        hyps[name] = [codec.decode(t) for t in out]
        fusion[name] = corpus_mer(zip(refs, hyps[name])).mer
    report["fusion"] = fusion
    report["fusion_config"] = to_dict(cfg.fusion)
    report["significance"] = {
        "lm_cs_vs_lm_mono": significance(refs, hyps["lm_cs"], hyps["lm_mono"], cfg.resamples,
                                         seed=derive_seed(s, "bootstrap")),
    }
    log.info("pipeline finished in %.1fs", time.perf_counter() - t0)
    models.update(baseline=baseline, teacher=teacher, lm_mono=lm_mono, lm_cs=lm_cs)
    return PipelineResult(report, recall_rows, hyps, models)


def _pseudo_texts(labelled, originals) -> list[str]:
    by_id = {u.utt_id: u.transcript for u in labelled}
    return [by_id.get(u.utt_id, "") for u in originals]


def write_reports(out_dir: str | Path, cfg: PipelineConfig, result: PipelineResult) -> list[Path]:
    """report.json, recall.csv, config.json and one hypothesis file per system."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "report.json", out / "recall.csv", out / "config.json"]
    write_json(paths[0], result.report)
    lines = ["N,E_A,E_L,NNLM,NNLM_CS"] + [",".join([str(r[0])] + [f"{v:.6f}" for v in r[1:]])
                                            for r in result.recall_rows]
    paths[1].write_text("\n".join(lines) + "\n", encoding="utf-8")
    # threads only caps workers, so it stays out of the written config
    write_json(paths[2], {k: v for k, v in to_dict(cfg).items() if k != "threads"})
    for name, hs in sorted(result.hyps.items()):
        p = out / f"hyps.{name}.txt"
        p.write_text("".join(h + "\n" for h in hs), encoding="utf-8")
        paths.append(p)
    return paths
