"""A synthetic two-language world for closed-loop experiments.

Two disjoint inventories (Latin-script "EN" words, CJK "ZH" characters) share
one grammar: ``PRON VERB [ADJ] NOUN`` with verb-noun selection, where EN
optionally inserts the determiner "the" before the noun phrase. Every content
token has a translation of the same POS in the other language. Each token is
realised acoustically as a fixed 1-3 frame template; utterances concatenate
templates and add i.i.d. Gaussian noise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .align import ParallelPair
from .corpus import EN, ZH, Sentence
from .csgen import switch_points
from .data import Utterance

CLASSES = ("PRON", "VERB", "ADJ", "NOUN")
DET = "the"
ZH_CHARS = "我你他她想要听看吃喝买拿找画红蓝大小新旧猫狗书车饭茶歌花鱼鸟树山水门灯桌椅船球"
CONSONANTS = "bdfgklmnprstvz"
VOWELS = "aeiou"


@dataclass(frozen=True)
class WorldConfig:
    n_pron: int = 3
    n_verb: int = 4
    n_adj: int = 3
    n_noun: int = 6
    nouns_per_verb: int = 3
    feat_dim: int = 8
    noise_sigma: float = 0.5
    det_prob: float = 0.5
    adj_prob: float = 0.5
    # when set, ZH characters come in near-homophone pairs: a shared base
    # template plus N(0, spread^2) per-character offsets
    zh_pair_spread: float | None = None
    # zero-template frames appended after the last token (trailing silence)
    tail_frames: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.tail_frames < 0:
            raise ValueError("tail_frames must be >= 0")
        if min(self.class_sizes().values()) < 1 or not 1 <= self.nouns_per_verb <= self.n_noun:
            raise ValueError("every word class needs at least one member and 1 <= nouns_per_verb <= n_noun")

    def class_sizes(self) -> dict[str, int]:
        return {"PRON": self.n_pron, "VERB": self.n_verb, "ADJ": self.n_adj, "NOUN": self.n_noun}


@dataclass
class SynthWorld:
    config: WorldConfig
    vocab_A: tuple[str, ...]  # EN
    vocab_B: tuple[str, ...]  # ZH
    lexicon: dict[str, dict[str, tuple[str, ...]]]  # lang -> class -> tokens (index-aligned translations)
    pos: dict[str, str]
    templates: dict[str, np.ndarray]
    verb_nouns: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if set(self.vocab_A) & set(self.vocab_B):
            raise ValueError("world vocabularies must be disjoint")

    @property
    def noise_sigma(self) -> float:
        return self.config.noise_sigma

    @property
    def seed(self) -> int:
        return self.config.seed

    def vocab(self, lang: str) -> tuple[str, ...]:
        return self.vocab_A if lang == EN else self.vocab_B

    def translate(self, token: str, to: str) -> str:
        tag = self.pos[token]
        frm = self.lexicon[EN if to == ZH else ZH][tag]
        return self.lexicon[to][tag][frm.index(token)]


def _en_words(n: int, rng: np.random.Generator) -> list[str]:
    words: list[str] = []
    while len(words) < n:
        w = rng.choice(list(CONSONANTS)) + rng.choice(list(VOWELS)) + rng.choice(list(CONSONANTS))
        if w not in words and w != DET:
            words.append(str(w))
    return words


def make_world(config: WorldConfig = WorldConfig()) -> SynthWorld:
    """Build a world deterministically from ``config`` (including its seed)."""
    rng = np.random.default_rng(config.seed)
    sizes = config.class_sizes()
    total = sum(sizes.values())
    if total > len(ZH_CHARS):
        raise ValueError(f"at most {len(ZH_CHARS)} content tokens per language")
    en = _en_words(total, rng)
    zh = [ZH_CHARS[i] for i in rng.permutation(len(ZH_CHARS))[:total]]
    lexicon: dict[str, dict[str, tuple[str, ...]]] = {EN: {}, ZH: {}}
    pos: dict[str, str] = {}
    k = 0
    for c in CLASSES:
        n = sizes[c]
        lexicon[EN][c] = tuple(en[k : k + n])
        lexicon[ZH][c] = tuple(zh[k : k + n])
        for w in en[k : k + n] + zh[k : k + n]:
            pos[w] = c
        k += n
    pos[DET] = "DET"
    vocab_A = tuple(en) + (DET,)
    vocab_B = tuple(zh)
    templates = {}
    for w in vocab_A + vocab_B:
        dur = int(rng.integers(1, 4))
        templates[w] = rng.normal(0.0, 1.0, size=(dur, config.feat_dim))
    if config.zh_pair_spread is not None:
        order = [vocab_B[int(i)] for i in rng.permutation(len(vocab_B))]
        for a, b in zip(order[0::2], order[1::2]):
            base = templates[a]
            for w in (a, b):
                templates[w] = base + config.zh_pair_spread * rng.normal(size=base.shape)
    verb_nouns = tuple(
        tuple(sorted(int(i) for i in rng.choice(config.n_noun, size=config.nouns_per_verb, replace=False)))
        for _ in range(config.n_verb)
    )
    return SynthWorld(config, vocab_A, vocab_B, lexicon, pos, templates, verb_nouns)


def synth_utterance(world: SynthWorld, tokens: Sequence[str], seed: int) -> tuple[np.ndarray, str]:
    """Concatenated token templates (then ``tail_frames`` zero frames) plus Gaussian noise of scale ``noise_sigma``."""
    for t in tokens:
        if t not in world.templates:
            raise KeyError(f"token {t!r} is not in the world")
    parts = [world.templates[t] for t in tokens]
    if world.config.tail_frames:
        parts.append(np.zeros((world.config.tail_frames, world.config.feat_dim)))
    clean = np.concatenate(parts, axis=0)
    if world.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        clean = clean + world.noise_sigma * rng.normal(size=clean.shape)
    return clean, " ".join(tokens)


# --------------------------------------------------------------------------- sentences


@dataclass(frozen=True)
class Concepts:
    """Language-neutral sentence: class index per slot (adj may be absent)."""

    pron: int
    verb: int
    adj: int | None
    noun: int

    def slots(self) -> list[tuple[str, int]]:
        out = [("PRON", self.pron), ("VERB", self.verb)]
        if self.adj is not None:
            out.append(("ADJ", self.adj))
        out.append(("NOUN", self.noun))
        return out


def sample_concepts(world: SynthWorld, rng: np.random.Generator) -> Concepts:
    c = world.config
    verb = int(rng.integers(c.n_verb))
    noun = int(rng.choice(world.verb_nouns[verb]))
    adj = int(rng.integers(c.n_adj)) if rng.random() < c.adj_prob else None
    return Concepts(int(rng.integers(c.n_pron)), verb, adj, noun)


def realise(world: SynthWorld, con: Concepts, lang: str, det: bool) -> tuple[list[str], list[str], list[int]]:
    """Tokens, POS tags and, per token, the concept slot it realises (-1 for "the")."""
    toks, tags, slot = [], [], []
    for k, (cls, idx) in enumerate(con.slots()):
        if lang == EN and det and cls in ("ADJ", "NOUN") and DET not in toks:
            toks.append(DET)
            tags.append("DET")
            slot.append(-1)
        toks.append(world.lexicon[lang][cls][idx])
        tags.append(cls)
        slot.append(k)
    return toks, tags, slot


def code_switch(world: SynthWorld, con: Concepts, matrix: str, phrase: bool, rng: np.random.Generator,
                det: bool = False) -> list[str]:
    """Matrix-language sentence with one slot (or two adjacent slots) in the other language."""
    other = ZH if matrix == EN else EN
    toks, _, slot = realise(world, con, matrix, det)
    n_slots = len(con.slots())
    content = [i for i, s in enumerate(slot) if s >= 0]
    if phrase:
        starts = [k for k in range(n_slots - 1)]
        s0 = int(rng.choice(starts))
        chosen = {s0, s0 + 1}
    else:
        chosen = {int(rng.integers(n_slots))}
    out = list(toks)
    for i in content:
        if slot[i] in chosen:
            out[i] = world.translate(toks[i], other)
    if phrase:
        # the matrix determiner cannot sit inside a switched phrase
        out = [t for i, t in enumerate(out) if not (slot[i] == -1 and i + 1 < len(slot) and slot[i + 1] in chosen
                                                    and (i == 0 or slot[i - 1] in chosen))]
    return out


# --------------------------------------------------------------------------- corpora


@dataclass(frozen=True)
class CorpusSizes:
    train: int = 60
    unlabeled: int = 300
    test: int = 100
    mixed: int = 200
    lm_text: int = 2000
    parallel: int = 500
    teacher_train: int = 0  # extra labelled utterances per language seen only by a pseudo-label teacher

    def __post_init__(self):
        for k, v in vars(self).items():
            if v < (0 if k == "teacher_train" else 1):
                raise ValueError(f"size {k} must be >= 1")


@dataclass
class Corpora:
    train: dict[str, list[Utterance]]
    unlabeled: dict[str, list[Utterance]]
    unlabeled_refs: dict[str, list[str]]
    test: dict[str, list[Utterance]]
    mixed: list[Utterance]
    lm_text: dict[str, list[str]]
    parallel: list[ParallelPair]
    teacher_train: dict[str, list[Utterance]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _utts(world, sents, prefix, lang, seed_base, keep_text=True):
    out = []
    for k, toks in enumerate(sents):
        feats, text = synth_utterance(world, toks, seed=seed_base + k)
        out.append(Utterance(f"{prefix}-{k:05d}", feats, text if keep_text else "", lang))
    return out


def make_corpora(
    world: SynthWorld,
    sizes: CorpusSizes = CorpusSizes(),
    cs_fraction_for_eval: float = 1.0,
    single_sub_fraction: float = 0.6,
    zh_matrix_fraction: float = 0.8,
    seed: int | None = None,
) -> Corpora:
    """Monolingual train/unlabeled/test sets, a mixed CS test set, LM text and a parallel corpus.

    All supervised and unlabeled data is strictly monolingual. Mixed test
    utterances carry one switched region, so at most two switch points; a
    ``single_sub_fraction`` share switch a single token and a
    ``zh_matrix_fraction`` share are ZH sentences with EN insertions. Only a
    ``cs_fraction_for_eval`` share of the mixed set switches at all; the rest
    are monolingual sentences in the matrix language.
    """
    for name, v in (("cs_fraction_for_eval", cs_fraction_for_eval), ("single_sub_fraction", single_sub_fraction),
                    ("zh_matrix_fraction", zh_matrix_fraction)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be within [0, 1]")
    seed = world.seed if seed is None else seed
    rng = np.random.default_rng([seed, 1])
    dp = world.config.det_prob

    def mono(n, lang):
        return [realise(world, sample_concepts(world, rng), lang, rng.random() < dp)[0] for _ in range(n)]

    train, unlabeled, refs, test, lm_text = {}, {}, {}, {}, {}
    for li, lang in enumerate((EN, ZH)):
        base = 10_000_000 * (li + 1)
        train[lang] = _utts(world, mono(sizes.train, lang), f"train-{lang}", lang, base)
        un = mono(sizes.unlabeled, lang)
        unlabeled[lang] = _utts(world, un, f"unlab-{lang}", lang, base + 1_000_000, keep_text=False)
        refs[lang] = [" ".join(t) for t in un]
        test[lang] = _utts(world, mono(sizes.test, lang), f"test-{lang}", lang, base + 2_000_000)
        lm_text[lang] = [" ".join(t) for t in mono(sizes.lm_text, lang)]
    teacher = {}
    for li, lang in enumerate((EN, ZH)):
        if sizes.teacher_train:
            teacher[lang] = _utts(world, mono(sizes.teacher_train, lang), f"teacher-{lang}", lang,
                                  10_000_000 * (li + 1) + 3_000_000)

    mixed_sents = []
    n_single = 0
    for _ in range(sizes.mixed):
        con = sample_concepts(world, rng)
        matrix = ZH if rng.random() < zh_matrix_fraction else EN
        det = matrix == EN and rng.random() < dp
        if rng.random() >= cs_fraction_for_eval:
            mixed_sents.append(realise(world, con, matrix, det)[0])
            continue
        phrase = rng.random() >= single_sub_fraction
        n_single += not phrase
        toks = code_switch(world, con, matrix, phrase, rng, det=det)
        mixed_sents.append(toks)
    mixed = _utts(world, mixed_sents, "mixed", "mixed", 40_000_000)

    parallel = []
    for k in range(sizes.parallel):
        con = sample_concepts(world, rng)
        zt, ztag, _ = realise(world, con, ZH, False)
        et, etag, _ = realise(world, con, EN, rng.random() < dp)
        parallel.append(
            ParallelPair(Sentence.from_surfaces(zt), Sentence.from_surfaces(et), tuple(ztag), tuple(etag),
                         pair_id=f"par-{k:05d}")
        )
    hist: dict[int, int] = {}
    for toks in mixed_sents:
        sp = switch_points(Sentence.from_surfaces(toks).tokens)
        hist[sp] = hist.get(sp, 0) + 1
    meta = {"mixed_single_sub": n_single, "mixed_switch_hist": dict(sorted(hist.items()))}
    return Corpora(train, unlabeled, refs, test, mixed, lm_text, parallel, teacher, meta)


def world_to_dict(world: SynthWorld) -> dict:
    return {
        "vocab": {EN: list(world.vocab_A), ZH: list(world.vocab_B)},
        "lexicon": {lang: {c: list(v) for c, v in d.items()} for lang, d in world.lexicon.items()},
        "pos": dict(sorted(world.pos.items())),
        "verb_nouns": [list(v) for v in world.verb_nouns],
        "templates": {w: t.tolist() for w, t in sorted(world.templates.items())},
    }


def write_corpora(out_dir: str | Path, world: SynthWorld, corpora: Corpora) -> list[Path]:
    """Dump a world and its corpora in the dataset, text and parallel formats read by the CLI.

    Files: ``world.json``, ``meta.json``, ``{train,teacher,unlabeled,test}.{EN,ZH}.jsonl``,
    ``unlabeled.{EN,ZH}.refs.txt``, ``mixed.jsonl``, ``mixed.refs.txt``, ``lm.{EN,ZH}.txt`` and
    ``parallel.txt`` with ``parallel.src.pos`` / ``parallel.tgt.pos``.
    """
    from .align import write_parallel, write_pos
    from .data import write_dataset

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []

    def text(name, lines):
        p = out / name
        p.write_text("".join(x + "\n" for x in lines), encoding="utf-8")
        paths.append(p)

    def data(name, utts):
        p = out / name
        write_dataset(p, utts)
        paths.append(p)

    p = out / "world.json"
    p.write_text(json.dumps(world_to_dict(world), ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(p)
    p = out / "meta.json"
    p.write_text(json.dumps(corpora.meta, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(p)
    for lang in (EN, ZH):
        data(f"train.{lang}.jsonl", corpora.train[lang])
        data(f"unlabeled.{lang}.jsonl", corpora.unlabeled[lang])
        text(f"unlabeled.{lang}.refs.txt", corpora.unlabeled_refs[lang])
        data(f"test.{lang}.jsonl", corpora.test[lang])
        text(f"lm.{lang}.txt", corpora.lm_text[lang])
        if corpora.teacher_train:
            data(f"teacher.{lang}.jsonl", corpora.teacher_train[lang])
    data("mixed.jsonl", corpora.mixed)
    text("mixed.refs.txt", [u.transcript for u in corpora.mixed])
    write_parallel(out / "parallel.txt", corpora.parallel)
    write_pos(out / "parallel.src.pos", [p.src_pos for p in corpora.parallel])
    write_pos(out / "parallel.tgt.pos", [p.tgt_pos for p in corpora.parallel])
    paths += [out / "parallel.txt", out / "parallel.src.pos", out / "parallel.tgt.pos"]
    return paths
