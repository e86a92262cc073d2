import json
import os
import subprocess
import sys

import numpy as np
import pytest

from sparsepos.cli import (
    ExperimentConfig, UsageError, apply_pairs, decode, main, read_config_file, read_tags, run_experiment,
    write_config_file,
)
from sparsepos.corpus import read_tagged
from sparsepos.hmm import load_model, save_model
from sparsepos.synth import synth_generate, write_tagged


@pytest.fixture
def corpus_file(tmp_path):
    corpus, vocab, _ = synth_generate(2, 15, 400, 1.0, seed=0, max_len=9)
    words = [[vocab.types[i] for i in s] for s in corpus.sentences]
    tags = [[corpus.tagset[t] for t in g] for g in corpus.gold]
    path = tmp_path / "train.txt"
    write_tagged(path, words, tags)
    return str(path)


def run(*argv):
    return main([str(a) for a in argv])


def test_stats_and_features(corpus_file, tmp_path, capsys):
    assert run("stats", corpus_file, "--lowercase", "--unk") == 0
    out = capsys.readouterr().out
    assert "tokens=400" in out and "avg_ambiguity_per_type=" in out
    assert run("features", corpus_file, "--variant", "large", "--dump", tmp_path / "f.txt") == 0
    assert "total\t" in capsys.readouterr().out
    assert (tmp_path / "f.txt").read_text().count("\n") == 15


def test_exit_codes(tmp_path, corpus_file, capsys):
    assert run("stats", tmp_path / "missing.txt") == 2
    with pytest.raises(SystemExit) as e:
        run("frobnicate")
    assert e.value.code == 1
    assert run("tag", "--model", "", "--corpus", corpus_file) == 1
    bad = tmp_path / "bad.txt"
    bad.write_text("a\tb\tc\n")
    assert run("stats", bad) == 2
    assert run("train", "--train", corpus_file, "--algo", "gibbs", "--out", tmp_path / "m.txt") == 1
    assert run("train", "--train", corpus_file, "--algo", "dg", "--out", tmp_path / "m.txt") == 1
    garbage = tmp_path / "model.txt"
    garbage.write_text("not a model\n")
    assert run("tag", "--model", garbage, "--corpus", corpus_file) == 2
    assert run("synth", "--states", "0", "--out", tmp_path / "s.txt") == 1
    capsys.readouterr()


def test_numerical_failure_exit_code(tmp_path, corpus_file):
    # a model that gives every word zero probability under one tag path
    model_path = tmp_path / "m.txt"
    assert run("train", "--train", corpus_file, "--states", 2, "--iters", 2, "--out", model_path) == 0
    m = load_model(model_path)
    m.log_emit[:] = -np.inf
    m.log_emit[0, :] = 0.0
    save_model(m, model_path)
    assert run("tag", "--model", model_path, "--corpus", corpus_file) == 3


def test_train_tag_eval(corpus_file, tmp_path, capsys):
    model = tmp_path / "m.txt"
    trace = tmp_path / "t.tsv"
    assert run("train", "--train", corpus_file, "--algo", "pr", "--states", 2, "--warmup", 3, "--pr-iters", 2,
               "--sigma", 5, "--min-occ", 3, "--seed", 7, "--out", model, "--trace", trace) == 0
    assert trace.read_text().splitlines()[0].split("\t")[-3:] == ["penalty", "objective18", "dual-iters"]
    meta = json.loads((tmp_path / "m.txt.json").read_text())
    assert meta["config"]["seeds"] == "7"
    tags = tmp_path / "tags.txt"
    assert run("tag", "--model", model, "--corpus", corpus_file, "--out", tags) == 0
    # tagging the training corpus equals decoding it in-process
    words, _ = read_tagged(corpus_file)
    corpus, expect = decode(load_model(model), words)
    assert np.array_equal(np.concatenate(read_tags(tags)), expect)
    report = tmp_path / "r.tsv"
    assert run("eval", "--gold", corpus_file, "--pred", f"{tags},{tags}", "--metrics", "all",
               "--out", report, "--freq", "--composition") == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "metric\tvalue\tper_seed" and len(lines) == 5
    assert run("eval", "--gold", corpus_file, "--pred", tags, "--metrics", "1-many,bogus") == 1
    capsys.readouterr()


def test_train_variants(corpus_file, tmp_path, capsys):
    for algo, em in (("em", "maxent"), ("dg", "maxent"), ("vb", "multinomial"), ("pr", "maxent")):
        out = tmp_path / f"{algo}-{em}.txt"
        assert run("train", "--train", corpus_file, "--algo", algo, "--emission", em, "--iters", 2,
                   "--warmup", 1, "--pr-iters", 1, "--features", "large", "--out", out) == 0
        load_model(out).check()
    capsys.readouterr()


def test_model_round_trip_via_cli(corpus_file, tmp_path):
    a = tmp_path / "a.txt"
    run("train", "--train", corpus_file, "--iters", 3, "--out", a)
    b = tmp_path / "b.txt"
    save_model(load_model(a), b)
    assert a.read_bytes() == b.read_bytes()


def test_config_precedence(tmp_path, corpus_file):
    cfg = tmp_path / "x.cfg"
    cfg.write_text(f"# comment\ntrain = {corpus_file}\nsigma = 4\niterations = 7\nseeds = 3,4\n")
    pairs = read_config_file(cfg)
    c = apply_pairs(ExperimentConfig(), pairs)
    assert c.sigma == 4.0 and c.iterations == 7 and c.seeds == (3, 4)
    # precedence: config file, then flags, then --set
    model = tmp_path / "m.txt"
    assert run("train", "--config", cfg, "--iters", 2, "--set", "jitter=0.02", "--out", model) == 0
    meta = json.loads((tmp_path / "m.txt.json").read_text())["config"]
    assert meta["iterations"] == "2" and meta["sigma"] == "4.0" and meta["jitter"] == "0.02"
    with pytest.raises(UsageError):
        apply_pairs(ExperimentConfig(), {"nope": "1"})
    with pytest.raises(UsageError):
        apply_pairs(ExperimentConfig(), {"sigma": "abc"})
    write_config_file(tmp_path / "y.cfg", c)
    assert apply_pairs(ExperimentConfig(), read_config_file(tmp_path / "y.cfg")) == c


def test_experiment_manifest(tmp_path):
    corpus, vocab, _ = synth_generate(2, 15, 10_000, 1.0, seed=1)
    sub = corpus.subset(range(50))
    path = tmp_path / "c.txt"
    write_tagged(path, [[vocab.types[i] for i in s] for s in sub.sentences],
                 [[sub.tagset[t] for t in g] for g in sub.gold])
    cfg = ExperimentConfig(train=str(path), states=2, seeds=(1,), iterations=5)
    man = run_experiment(cfg, str(tmp_path / "out"))
    data = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert len(data["runs"]) == 1 and set(data["summary"]) == {"1-many", "1-1", "vi", "v"}
    r = data["runs"][0]
    assert r["error"] is None
    for key in ("model", "trace", "tags"):
        assert os.path.exists(r[key])
    load_model(r["model"])
    assert len(np.concatenate(read_tags(r["tags"]))) == sub.num_tokens
    assert man.runs[0]["metrics"]["1-many"] == data["summary"]["1-many"]
    assert (tmp_path / "out" / "experiment.cfg").exists()


def test_experiment_same_seed_twice(tmp_path, corpus_file):
    cfg = ExperimentConfig(train=corpus_file, states=2, seeds=(1, 1), iterations=4)
    man = run_experiment(cfg, str(tmp_path / "out"))
    a, b = man.runs
    assert open(a["model"], "rb").read() == open(b["model"], "rb").read()
    assert open(a["tags"]).read() == open(b["tags"]).read()


def test_experiment_pr_zero_equals_em(tmp_path, corpus_file):
    em = run_experiment(ExperimentConfig(train=corpus_file, states=2, seeds=(2,), iterations=6),
                        str(tmp_path / "em"))
    pr = run_experiment(ExperimentConfig(train=corpus_file, states=2, seeds=(2,), algorithm="pr",
                                         em_warmup=6, pr_iterations=0), str(tmp_path / "pr"))
    assert em.summary == pr.summary


def test_experiment_records_failures(tmp_path, corpus_file, capsys):
    test = tmp_path / "test.txt"
    test.write_text("zzz-unseen\tT0\n")
    rc = run("experiment", "--train", corpus_file, "--test", test, "--states", 2, "--iters", 2, "--seeds", "1",
             "--preprocess", "none", "--out", tmp_path / "o")
    data = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert data["runs"][0]["error"]["stage"] == "decode"
    assert rc == 2
    capsys.readouterr()


def test_semisup_and_synth(tmp_path, capsys):
    synth = tmp_path / "s.txt"
    assert run("synth", "--states", 3, "--types", 60, "--tokens", 3000, "--sparsity", 0.5, "--out", synth) == 0
    out = tmp_path / "curve.tsv"
    assert run("semisup", "--corpus", synth, "--oracle", "--sizes", "10,20", "--samples", 2,
               "--test-size", 50, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    assert run("semisup", "--corpus", synth, "--sizes", "0") == 1
    capsys.readouterr()


def test_module_entry_point(corpus_file):
    res = subprocess.run([sys.executable, "-m", "sparsepos.cli", "stats", corpus_file],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "sentences=" in res.stdout
    res = subprocess.run([sys.executable, "-m", "sparsepos.cli"], capture_output=True, text=True)
    assert res.returncode == 1
