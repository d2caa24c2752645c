import json
import subprocess
import sys

import pytest

from csasr.cli import main

TINY_SIZES = {"train": 8, "unlabeled": 8, "test": 4, "mixed": 8, "lm_text": 40, "parallel": 20, "teacher_train": 4}
TINY_PIPELINE = {
    "sizes": TINY_SIZES,
    "supervised": {"epochs": 2}, "teacher": {"epochs": 1}, "pretrain": {"epochs": 1}, "finetune": {"epochs": 1},
    "lm_train": {"epochs": 1}, "lm_finetune": {"epochs": 1}, "ratios": [25, 50], "bpe_merges": 20,
    "resamples": 1000, "model": {"enc_hidden": 16, "pred_hidden": 16, "joint_dim": 16, "embed_dim": 8},
}


def run(*argv):
    return main([str(a) for a in argv] + ["--log-level", "WARNING"])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A synthetic world, codec, tiny transducer and NNLM built through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    (d / "sizes.json").write_text(json.dumps({"sizes": TINY_SIZES}))
    assert run("synth-world", "--config", d / "sizes.json", "--seed", 3, "--out", d / "w") == 0
    text = (d / "w" / "lm.EN.txt").read_text(encoding="utf-8") + (d / "w" / "lm.ZH.txt").read_text(encoding="utf-8")
    (d / "lm.txt").write_text(text, encoding="utf-8")
    assert run("bpe", "--in", d / "lm.txt", "--merges", 30, "--out", d / "bpe.txt", "--codec-out", d / "codec.json",
               "--vocab-out", d / "vocab.txt") == 0
    assert run("train", "--data", d / "w/train.EN.jsonl", "--data", d / "w/train.ZH.jsonl", "--codec", d / "codec.json",
               "--variant", "simple_joiner", "--encoder", "conv", "--epochs", 2, "--out", d / "m.npz") == 0
    assert run("finetune-lm", "--text", d / "lm.txt", "--codec", d / "codec.json", "--epochs", 1,
               "--out", d / "lm.npz") == 0
    return d


def test_score_mer_identical_files(workdir):
    refs = workdir / "w" / "mixed.refs.txt"
    assert run("score-mer", "--ref", refs, "--hyp", refs, "--out", workdir / "s.json") == 0
    assert json.loads((workdir / "s.json").read_text())["mer"] == 0.0


def test_decode_zero_weights_equals_no_lm(workdir):
    d = workdir
    assert run("decode", "--model", d / "m.npz", "--data", d / "w/mixed.jsonl", "--out", d / "h0.txt") == 0
    assert run("decode", "--model", d / "m.npz", "--data", d / "w/mixed.jsonl", "--lm", d / "lm.npz",
               "--lambda-lm", 0, "--lambda-ilm", 0, "--out", d / "h1.txt", "--nbest-out", d / "nb.jsonl") == 0
    assert (d / "h0.txt").read_bytes() == (d / "h1.txt").read_bytes()
    rec = json.loads((d / "nb.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert set(rec) == {"utt_id", "rank", "text", "log_t", "log_lm", "log_ilm", "combined"}


def test_threads_do_not_change_output(workdir):
    d = workdir
    assert run("decode", "--model", d / "m.npz", "--data", d / "w/mixed.jsonl", "--lm", d / "lm.npz",
               "--out", d / "t1.txt") == 0
    assert run("decode", "--model", d / "m.npz", "--data", d / "w/mixed.jsonl", "--lm", d / "lm.npz",
               "--out", d / "t3.txt", "--threads", 3) == 0
    assert (d / "t1.txt").read_bytes() == (d / "t3.txt").read_bytes()


def test_text_pipeline_commands(workdir):
    d = workdir
    w = d / "w"
    assert run("tokenize", "--in", d / "lm.txt", "--out", d / "tok.jsonl") == 0
    assert run("align-train", "--parallel", w / "parallel.txt", "--iterations", 3, "--out", d / "al.npz") == 0
    assert run("align", "--model", d / "al.npz", "--parallel", w / "parallel.txt", "--out", d / "links.txt") == 0
    for mode in ("token", "phrase"):
        assert run("gen", "--mode", mode, "--parallel", w / "parallel.txt", "--align", d / "links.txt",
                   "--src-pos", w / "parallel.src.pos", "--tgt-pos", w / "parallel.tgt.pos",
                   "--out", d / f"cs.{mode}.jsonl") == 0
    tok = set((d / "cs.token.jsonl").read_text(encoding="utf-8").splitlines())
    phr = (d / "cs.phrase.jsonl").read_text(encoding="utf-8").splitlines()
    texts = lambda lines: {json.loads(x)["text"] for x in lines}  # noqa: E731
    assert texts(tok) <= texts(phr) and phr
    assert run("gen-cs", "--mode", "phrase", "--direction", "both", "--parallel", w / "parallel.txt",
               "--align", d / "links.txt", "--src-pos", w / "parallel.src.pos", "--tgt-pos", w / "parallel.tgt.pos",
               "--out", d / "cs.both.jsonl") == 0
    assert run("finetune-lm", "--text", d / "cs.phrase.jsonl", "--lm", d / "lm.npz", "--epochs", 1,
               "--out", d / "lmcs.npz") == 0


def test_model_commands(workdir):
    d = workdir
    w = d / "w"
    assert run("recall", "--model", d / "m.npz", "--data", w / "mixed.jsonl", "--lm", d / "lm.npz",
               "--out", d / "r.csv", "--json-out", d / "r.json") == 0
    assert (d / "r.csv").read_text().splitlines()[0] == "N,E_A,E_L,NNLM"
    assert run("ssl", "--unlabeled", w / "unlabeled.EN.jsonl", "--unlabeled", w / "unlabeled.ZH.jsonl",
               "--supervised", w / "train.EN.jsonl", "--supervised", w / "train.ZH.jsonl", "--teacher", d / "m.npz",
               "--ratio", 25, "--pretrain-epochs", 1, "--finetune-epochs", 1, "--out", d / "ssl.npz") == 0
    assert run("train", "--data", w / "train.EN.jsonl", "--init", d / "ssl.npz", "--epochs", 1, "--out", d / "m2.npz") == 0
    assert run("significance", "--ref", w / "mixed.refs.txt", "--hyp-a", w / "mixed.refs.txt",
               "--hyp-b", w / "mixed.refs.txt", "--resamples", 1000, "--out", d / "p.json") == 0
    assert json.loads((d / "p.json").read_text())["p_value"] == 1.0


def test_train_defaults_to_testbed_settings(workdir):
    from csasr.model.checkpoint import load_model
    from csasr.pipeline import PipelineConfig

    d = workdir
    cfg = d / "small.json"
    cfg.write_text(json.dumps({"model": {"enc_hidden": 8, "pred_hidden": 8}}))
    assert run("train", "--data", d / "w/train.EN.jsonl", "--codec", d / "codec.json", "--config", cfg,
               "--epochs", 1, "--out", d / "dflt.npz") == 0
    mc = load_model(d / "dflt.npz").config
    assert (mc.variant, mc.encoder) == (PipelineConfig.model.variant, PipelineConfig.model.encoder)
    assert (mc.enc_hidden, mc.joint_dim) == (8, PipelineConfig.model.joint_dim)


def test_config_file_and_flag_precedence(workdir, tmp_path):
    d = workdir
    cfg = {"model": str(d / "m.npz"), "data": str(d / "w/mixed.jsonl"), "out": str(tmp_path / "a.txt"), "beam": 2}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run("decode", "--config", tmp_path / "c.json", "--beam", 8) == 0
    assert run("decode", "--model", d / "m.npz", "--data", d / "w/mixed.jsonl", "--out", tmp_path / "b.txt") == 0
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()


@pytest.mark.parametrize("cfg", [{"bogus": 1}, {"beam": "wide"}, {"lambda_lm": [1]}])
def test_bad_config_is_usage_error(tmp_path, cfg):
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert run("decode", "--config", tmp_path / "c.json") == 2


def test_exit_codes(tmp_path):
    assert run("decode", "--data", "x") == 2  # missing required options
    assert run("no-such-command") == 2
    assert run("decode", "--model", tmp_path / "missing.npz", "--data", "x", "--out", tmp_path / "o") == 1
    assert run("score-mer", "--ref", tmp_path / "missing", "--hyp", tmp_path / "missing") == 1
    assert run("repro", "--out", tmp_path / "r", "--threads", 0) == 2
    (tmp_path / "bad.json").write_text(json.dumps({"sizes": {"trian": 3}}))
    assert run("repro", "--config", tmp_path / "bad.json", "--out", tmp_path / "r") == 2


def test_installed_script_runs(tmp_path):
    (tmp_path / "r.txt").write_text("我 cat\n")
    out = subprocess.run([sys.executable, "-m", "csasr.cli", "score-mer", "--ref", str(tmp_path / "r.txt"),
                          "--hyp", str(tmp_path / "r.txt")], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout == "" and "mer 0.000000" in out.stderr
    assert "score-mer config" in out.stderr


def test_repro_twice_is_byte_identical(tmp_path):
    (tmp_path / "c.json").write_text(json.dumps(TINY_PIPELINE))
    for name, threads in (("a", 1), ("b", 2)):
        assert run("repro", "--seed", 7, "--config", tmp_path / "c.json", "--out", tmp_path / name,
                   "--threads", threads) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    assert {"report.json", "recall.csv", "config.json"} <= set(files)
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert report["seed"] == 7
    assert set(report["ssl"]) == {"75:25", "50:50"}
    assert set(report["fusion"]) == {"no_lm", "lm_mono", "lm_cs"}
    # a different seed gives a different run
    assert run("repro", "--seed", 8, "--config", tmp_path / "c.json", "--out", tmp_path / "c") == 0
    assert (tmp_path / "c" / "report.json").read_bytes() != (tmp_path / "a" / "report.json").read_bytes()
