"""Command-line entry point: one subcommand per pipeline stage.

Every subcommand accepts ``--config FILE`` (a JSON object whose keys are the
subcommand's option names, with underscores) plus ``--seed``, ``--threads``
and ``--log-level``. Explicit flags override config values, which override
defaults; unknown config keys are a usage error. The resolved options are
logged to stderr before the command runs, and data goes to files only.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import torch

from . import config as cfgmod
from .align import AlignmentModel, align_pair, load_pairs, write_alignments
from .corpus import EN, ZH, TextCodec, build_union_vocab, read_corpus, train_bpe
from .csgen import GenConfig, generate_corpus, read_jsonl_texts, write_jsonl
from .data import read_dataset, split_by_lang
from .decode import FusionConfig, beam_search, decode_many, write_nbest
from .evaluation import RecallConfig, corpus_mer, encoder_recall, significance, write_json, write_recall_csv
from .model.checkpoint import load_model, save_model
from .model.networks import ENCODERS, VARIANTS, LmConfig, NnlmModel, TransducerConfig, TransducerModel
from .model.training import TrainConfig, pseudo_label, ssl_pipeline, train, train_lm
from .pipeline import PipelineConfig, derive_seed, run, write_reports

log = logging.getLogger("csasr")

GEN_MODES = {"token": "token-only", "phrase": "token-or-phrase"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------- helpers


def _need(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n, None) in (None, [])]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s) " + ", ".join(
            "--" + n.replace("_", "-") for n in missing))


def _lines(path: str | Path) -> list[str]:
    return Path(path).read_text(encoding="utf-8").splitlines()


def _write_lines(path: str | Path, lines: Sequence[str]) -> None:
    Path(path).write_text("".join(x + "\n" for x in lines), encoding="utf-8")


def _datasets(paths: Sequence[str]):
    return [u for p in paths for u in read_dataset(p)]


def _transducer(path: str) -> TransducerModel:
    model = load_model(path)
    if not isinstance(model, TransducerModel):
        raise ValueError(f"{path} is not a transducer checkpoint")
    return model


def _nnlm(path: str) -> NnlmModel:
    model = load_model(path)
    if not isinstance(model, NnlmModel):
        raise ValueError(f"{path} is not an NNLM checkpoint")
    return model


def _record(args, cls, key: str, flags: dict, default=None):
    """Dataclass from the nested config object ``key`` overlaid with non-None flag values.

    ``default`` replaces the dataclass defaults as the starting point.
    """
    data = getattr(args, key) or {}
    base = cfgmod.from_dict(cls, data, key) if default is None else cfgmod.override(default, data)
    changes = {k: v for k, v in flags.items() if v is not None}
    return cfgmod.override(base, changes) if changes else base


def _train_flags(args) -> dict:
    return {"lr": args.lr, "epochs": args.epochs, "batch_size": args.batch_size, "lr_decay": args.lr_decay}


def _add_train_flags(p) -> None:
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-decay", type=float)


def _add_model_flags(p) -> None:
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--encoder", choices=ENCODERS)


# --------------------------------------------------------------------------- subcommands


def cmd_tokenize(args) -> None:
    _need(args, "input", "out")
    sents = read_corpus(args.input)
    with open(args.out, "w", encoding="utf-8") as fh:
        for s in sents:
            fh.write(json.dumps(s.to_dict(), ensure_ascii=False) + "\n")
    log.info("tokenized %d sentences", len(sents))


def cmd_bpe(args) -> None:
    _need(args, "input", "out")
    sents = [s for p in args.input for s in read_corpus(p)]
    bpe = train_bpe(sents, args.merges, lang=EN)
    bpe.save(args.out)
    log.info("learned %d merges, %d units", len(bpe.merges), len(bpe.units()))
    if args.codec_out or args.vocab_out:
        zh = sorted({t.surface for s in sents for t in s.tokens if t.lang == ZH})
        vocab = build_union_vocab(bpe, zh)
        if args.vocab_out:
            vocab.save(args.vocab_out)
        if args.codec_out:
            Path(args.codec_out).write_text(json.dumps(TextCodec(bpe, vocab).to_dict(), ensure_ascii=False) + "\n",
                                            encoding="utf-8")
        log.info("union vocabulary: %d entries", len(vocab))


def cmd_align_train(args) -> None:
    from .align import train_aligner

    _need(args, "parallel", "out")
    pairs = load_pairs(args.parallel)
    if args.reverse:
        pairs = [p.swapped() for p in pairs]
    model = train_aligner(pairs, args.iterations, args.tension, args.null_prob)
    with open(args.out, "wb") as fh:
        model.save(fh)
    log.info("log-likelihood per iteration: %s", ", ".join(f"{x:.4f}" for x in model.loglik_history))


def cmd_align(args) -> None:
    _need(args, "model", "parallel", "out")
    model = AlignmentModel.load(args.model)
    pairs = load_pairs(args.parallel)
    if args.reverse:
        pairs = [p.swapped() for p in pairs]
    aligned = [align_pair(model, p) for p in pairs]
    write_alignments(args.out, aligned)
    d = model.diagnostics
    log.info("aligned %d pairs (unseen src %d, unseen tgt %d)", len(aligned), d.unseen_src, d.unseen_tgt)


def cmd_gen_cs(args) -> None:
    _need(args, "parallel", "align", "src_pos", "tgt_pos", "out")
    pairs = load_pairs(args.parallel, args.src_pos, args.tgt_pos, args.align)
    cfg = GenConfig(mode=GEN_MODES[args.mode], max_outputs_per_pair=args.max_outputs)
    out = []
    if args.direction in ("src", "both"):
        out += generate_corpus(pairs, cfg)
    if args.direction in ("tgt", "both"):
        out += generate_corpus([p.swapped() for p in pairs], cfg)
    write_jsonl(args.out, out)
    log.info("generated %d CS sentences from %d pairs", len(out), len(pairs))


def cmd_synth_world(args) -> None:
    from .testbed import make_corpora, make_world, write_corpora

    _need(args, "out")
    # defaults match the repro pipeline, so equal seeds give equal corpora
    wc = cfgmod.override(PipelineConfig.world, args.world or {})
    sizes = cfgmod.override(PipelineConfig.sizes, args.sizes or {})
    world = make_world(replace(wc, seed=derive_seed(args.seed, "world")))
    corpora = make_corpora(world, sizes, args.cs_fraction_for_eval, args.single_sub_fraction,
                           args.zh_matrix_fraction, seed=derive_seed(args.seed, "corpora"))
    paths = write_corpora(args.out, world, corpora)
    log.info("wrote %d files to %s", len(paths), args.out)


def cmd_train(args) -> None:
    _need(args, "data", "out")
    utts = _datasets(args.data)
    if args.init:
        model = _transducer(args.init)
    else:
        _need(args, "codec")
        codec = TextCodec.from_dict(json.loads(Path(args.codec).read_text(encoding="utf-8")))
        mc = _record(args, TransducerConfig, "model", {"variant": args.variant, "encoder": args.encoder},
                     PipelineConfig.model)
        model = TransducerModel(codec, mc, seed=derive_seed(args.seed, "init"))
    tc = _record(args, TrainConfig, "train", _train_flags(args), PipelineConfig.supervised)
    res = train(model, utts, replace(tc, seed=derive_seed(args.seed, "train")))
    save_model(args.out, model)
    log.info("trained %d epochs, final loss %.4f", len(res.losses), res.losses[-1] if res.losses else float("nan"))


def cmd_ssl(args) -> None:
    _need(args, "unlabeled", "supervised", "teacher", "out")
    teacher = _transducer(args.teacher)
    unlabeled = split_by_lang(_datasets(args.unlabeled))
    supervised = split_by_lang(_datasets(args.supervised))
    for name, pools in (("unlabeled", unlabeled), ("supervised", supervised)):
        bad = sorted(set(pools) - {EN, ZH})
        if bad:
            raise ValueError(f"{name} data must be monolingual EN/ZH utterances, got lang {bad}")
    pseudo = {}
    for lang, utts in sorted(unlabeled.items()):
        pseudo[lang], st = pseudo_label(teacher, utts, args.threads)
        log.info("pseudo-labels %s: kept %d, dropped %d empty", lang, st.kept, st.dropped_empty)
    mc = _record(args, TransducerConfig, "model", {"variant": args.variant, "encoder": args.encoder},
                 PipelineConfig.model)
    pre = _record(args, TrainConfig, "pretrain", {"epochs": args.pretrain_epochs, "lr": args.pretrain_lr},
                  PipelineConfig.pretrain)
    fine = _record(args, TrainConfig, "finetune", {"epochs": args.finetune_epochs, "lr": args.finetune_lr},
                   PipelineConfig.finetune)
    if args.model is None and args.variant is None and args.encoder is None:
        mc = teacher.config
    res = ssl_pipeline(
        unlabeled, supervised, args.ratio,
        replace(pre, seed=derive_seed(args.seed, "pretrain")),
        replace(fine, seed=derive_seed(args.seed, "finetune")),
        teacher=teacher, model_config=mc, seed=derive_seed(args.seed, "init"), pseudo_labeled=pseudo,
    )
    save_model(args.out, res.model)


def cmd_finetune_lm(args) -> None:
    _need(args, "text", "out")
    texts = []
    for p in args.text:
        texts += read_jsonl_texts(p) if str(p).endswith(".jsonl") else _lines(p)
    if args.lm:
        lm = _nnlm(args.lm)
    else:
        _need(args, "codec")
        codec = TextCodec.from_dict(json.loads(Path(args.codec).read_text(encoding="utf-8")))
        lm = NnlmModel(codec, cfgmod.from_dict(LmConfig, args.lm_config or {}, "lm_config"),
                       seed=derive_seed(args.seed, "lm-init"))
    default = PipelineConfig.lm_finetune if args.lm else PipelineConfig.lm_train
    tc = _record(args, TrainConfig, "train", _train_flags(args), default)
    res = train_lm(lm, texts, replace(tc, seed=derive_seed(args.seed, "lm-train")))
    save_model(args.out, lm)
    log.info("NNLM trained on %d sentences, final loss %.4f", len(texts), res.losses[-1])


def _fusion(args, with_lm: bool) -> FusionConfig:
    # without an LM both weights default to 0: plain transducer beam search
    lam_lm = args.lambda_lm if args.lambda_lm is not None else (FusionConfig.lambda_lm if with_lm else 0.0)
    lam_ilm = args.lambda_ilm if args.lambda_ilm is not None else (FusionConfig.lambda_ilm if with_lm else 0.0)
    return FusionConfig(lam_lm, lam_ilm, args.beam, args.max_symbols)


def cmd_decode(args) -> None:
    _need(args, "model", "data", "out")
    model = _transducer(args.model)
    lm = _nnlm(args.lm) if args.lm else None
    fc = _fusion(args, lm is not None)
    log.info("fusion: %s", json.dumps(cfgmod.to_dict(fc)))
    utts = read_dataset(args.data)
    nbest = decode_many(lambda u: beam_search(model, lm, u.features, fc), utts, args.threads)
    _write_lines(args.out, [model.codec.decode(h[0].tokens) if h else "" for h in nbest])
    if args.nbest_out:
        write_nbest(args.nbest_out, [(u.utt_id, h) for u, h in zip(utts, nbest)], model.codec)
    log.info("decoded %d utterances", len(utts))


def cmd_score_mer(args) -> None:
    _need(args, "ref", "hyp")
    refs, hyps = _lines(args.ref), _lines(args.hyp)
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    rep = corpus_mer(zip(refs, hyps))
    out = {**rep.to_dict(), "skipped_empty_ref": rep.skipped_empty_ref}
    if args.out:
        write_json(args.out, out)
    log.info("mer %.6f (S %d, I %d, D %d, N %d)", rep.mer, rep.substitutions, rep.insertions, rep.deletions,
             rep.ref_tokens)


def cmd_recall(args) -> None:
    _need(args, "model", "data", "out")
    model = _transducer(args.model)
    lm = _nnlm(args.lm) if args.lm else None
    utts = read_dataset(args.data)
    rc = RecallConfig(n_values=tuple(range(1, args.max_n + 1)))
    rep = encoder_recall(model, [(u.features, u.transcript) for u in utts], lm, rc)
    write_recall_csv(args.out, rep)
    if args.json_out:
        write_json(args.json_out, {"recall": rep.to_dict(), **rep.meta()})
    log.info("recall@%d: %s", args.max_n, ", ".join(f"{s} {c[args.max_n]:.3f}" for s, c in rep.recall.items()))


def cmd_significance(args) -> None:
    _need(args, "ref", "hyp_a", "hyp_b")
    p = significance(_lines(args.ref), _lines(args.hyp_a), _lines(args.hyp_b), args.resamples, seed=args.seed)
    if args.out:
        write_json(args.out, {"p_value": p, "resamples": args.resamples, "seed": args.seed})
    log.info("paired bootstrap p = %.6f", p)


def cmd_repro(args) -> None:
    _need(args, "out")
    pc = PipelineConfig()
    if args.pipeline:
        pc = cfgmod.override(pc, args.pipeline)
    pc = replace(pc, seed=pc.seed if args.seed is None else args.seed, threads=args.threads)
    log.info("pipeline config: %s", json.dumps(cfgmod.to_dict(pc), sort_keys=True))
    result = run(pc)
    paths = write_reports(args.out, pc, result)
    log.info("wrote %s", ", ".join(p.name for p in paths))


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON object of option values")
    common.add_argument("--seed", type=int, help="run seed (default 0; repro falls back to the config's seed)")
    common.add_argument("--threads", type=int, default=1, help="worker cap; outputs do not depend on it")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="csasr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    parser.subcommands = {}

    def add(name, fn, help, nested=(), aliases=()):
        p = sub.add_parser(name, parents=[common], help=help, aliases=list(aliases))
        p.set_defaults(_fn=fn, _nested=tuple(nested), **{k: None for k in nested})
        for n in (name, *aliases):
            parser.subcommands[n] = p
        return p

    p = add("tokenize", cmd_tokenize, "split mixed text into EN words and ZH characters (JSONL out)")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")

    p = add("bpe", cmd_bpe, "learn EN BPE merges; optionally write the union vocabulary and codec")
    p.add_argument("--in", dest="input", action="append")
    p.add_argument("--merges", type=int, default=200)
    p.add_argument("--out")
    p.add_argument("--vocab-out")
    p.add_argument("--codec-out")

    for name, fn in (("align-train", cmd_align_train), ("align", cmd_align)):
        p = add(name, fn, "train the IBM-2 aligner" if fn is cmd_align_train else "Viterbi-align a parallel corpus")
        p.add_argument("--parallel")
        p.add_argument("--out")
        p.add_argument("--reverse", action="store_true", help="swap source and target sides")
        if fn is cmd_align_train:
            p.add_argument("--iterations", type=int, default=5)
            p.add_argument("--tension", type=float, default=4.0)
            p.add_argument("--null-prob", type=float, default=0.08)
        else:
            p.add_argument("--model")

    p = add("gen-cs", cmd_gen_cs, "generate CS sentences from aligned, POS-tagged pairs", aliases=["gen"])
    p.add_argument("--mode", choices=sorted(GEN_MODES), default="phrase")
    p.add_argument("--parallel")
    p.add_argument("--align")
    p.add_argument("--src-pos")
    p.add_argument("--tgt-pos")
    p.add_argument("--direction", choices=("src", "tgt", "both"), default="src",
                   help="which side is the matrix sentence")
    p.add_argument("--max-outputs", type=int, default=GenConfig.max_outputs_per_pair)
    p.add_argument("--out")

    p = add("synth-world", cmd_synth_world, "write a synthetic world and its corpora", nested=("world", "sizes"))
    p.add_argument("--out")
    p.add_argument("--cs-fraction-for-eval", type=float, default=1.0)
    p.add_argument("--single-sub-fraction", type=float, default=0.6)
    p.add_argument("--zh-matrix-fraction", type=float, default=0.8)

    p = add("train", cmd_train, "supervised transducer training", nested=("model", "train"))
    p.add_argument("--data", action="append")
    p.add_argument("--codec")
    p.add_argument("--init", help="start from this checkpoint instead of a fresh model")
    p.add_argument("--out")
    _add_model_flags(p)
    _add_train_flags(p)

    p = add("ssl", cmd_ssl, "pseudo-label, ratio-mixed pretraining, then fine-tuning",
            nested=("model", "pretrain", "finetune"))
    p.add_argument("--unlabeled", action="append")
    p.add_argument("--supervised", action="append")
    p.add_argument("--teacher")
    p.add_argument("--ratio", type=float, default=50.0, help="EN percentage a of each pretraining batch")
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--pretrain-lr", type=float)
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--finetune-lr", type=float)
    p.add_argument("--out")
    _add_model_flags(p)

    p = add("finetune-lm", cmd_finetune_lm, "train or fine-tune an NNLM on text", nested=("train", "lm_config"))
    p.add_argument("--text", action="append", help="plain text, or CS JSONL (.jsonl)")
    p.add_argument("--lm", help="checkpoint to fine-tune; a fresh NNLM needs --codec")
    p.add_argument("--codec")
    p.add_argument("--out")
    _add_train_flags(p)

    p = add("decode", cmd_decode, "beam search with optional shallow fusion and ILM subtraction")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--lm")
    p.add_argument("--lambda-lm", type=float)
    p.add_argument("--lambda-ilm", type=float)
    p.add_argument("--beam", type=int, default=FusionConfig.beam_size)
    p.add_argument("--max-symbols", type=int, default=FusionConfig.max_symbols_per_frame)
    p.add_argument("--out")
    p.add_argument("--nbest-out")

    p = add("score-mer", cmd_score_mer, "corpus mixed error rate of line-aligned files")
    p.add_argument("--ref")
    p.add_argument("--hyp")
    p.add_argument("--out")

    p = add("recall", cmd_recall, "top-N minor-language keyword recall per encoder (simple joiner)")
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--lm")
    p.add_argument("--max-n", type=int, default=10)
    p.add_argument("--out")
    p.add_argument("--json-out")

    p = add("significance", cmd_significance, "paired-bootstrap p-value between two systems")
    p.add_argument("--ref")
    p.add_argument("--hyp-a")
    p.add_argument("--hyp-b")
    p.add_argument("--resamples", type=int, default=10000)
    p.add_argument("--out")

    p = add("repro", cmd_repro, "run the full testbed pipeline and write reports", nested=("pipeline",))
    p.add_argument("--out")
    return parser


INTERNAL = {"_fn", "_nested", "command", "config", "log_level"}


def _check_value(action: argparse.Action, value, where: str) -> None:
    name = action.dest
    if action.nargs == 0:
        ok = isinstance(value, bool)
    elif action.type is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif action.type is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(action, argparse._AppendAction):  # noqa: SLF001
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    else:
        ok = value is None or isinstance(value, str)
    if not ok:
        raise cfgmod.ConfigError(f"{where}: bad value for {name}: {value!r}")
    if action.choices is not None and value not in action.choices:
        raise cfgmod.ConfigError(f"{where}: {name} must be one of {sorted(action.choices)}")


def _resolve(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not args.config:
        return args
    data = cfgmod.load_json(args.config)
    if args.command == "repro":
        # the repro config file is a pipeline config record
        data = {"pipeline": data}
    known = {k for k in vars(args) if k not in INTERNAL} | set(args._nested)
    unknown = sorted(set(data) - known)
    if unknown:
        raise cfgmod.ConfigError(f"{args.config}: unknown keys {unknown}")
    sub = parser.subcommands[args.command]
    for action in sub._actions:  # noqa: SLF001 - argparse exposes no public accessor
        if action.dest in data:
            _check_value(action, data[action.dest], args.config)
    # rebuild with config values as defaults so explicit flags still win
    sub.set_defaults(**data)
    try:
        return parser.parse_args(argv)
    finally:
        sub.set_defaults(**{k: None for k in data})


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _resolve(parser, argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except cfgmod.ConfigError as exc:
        print(f"csasr: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)
    torch.set_num_threads(1)
    if args.seed is None and args.command != "repro":
        args.seed = 0
    resolved = {k: v for k, v in sorted(vars(args).items()) if k not in INTERNAL}
    log.info("%s config: %s", args.command, json.dumps(resolved, sort_keys=True, ensure_ascii=False))
    if args.threads < 1:
        print("csasr: error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        args._fn(args)
    except (UsageError, cfgmod.ConfigError) as exc:
        print(f"csasr: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.error("%s failed: %s: %s", args.command, type(exc).__name__, exc)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
