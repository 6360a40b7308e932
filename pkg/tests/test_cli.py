import json

import numpy as np
import pytest
import yaml

from econet import attention
from econet.cli import EXIT_CODES, main
from econet.lexicon import load_default
from econet.masking import EVENT, TEMPORAL, read_jsonl
from econet.model import load_checkpoint
from econet.synthetic import ERE_LABELS, make_documents, make_ere_examples
from econet.tasks import read_task_jsonl
from econet.vocab import Vocabulary

TINY = {
    "model": {"n_layers": 2, "n_heads": 2, "hidden_dim": 16, "ffn_dim": 32, "max_seq_len": 64},
    "pretrain": {"lr": 1e-3, "batch_size": 4, "max_steps": 12, "checkpoint_every": 6},
    "finetune": {"lr": 1e-3, "epochs": 2, "seeds": [5, 7], "labels": "matres",
                 "lr_grid": [1e-3, 3e-3], "batch_grid": [4]},
}


def write_docs(directory, n=30, seed=0):
    directory.mkdir(parents=True, exist_ok=True)
    docs = make_documents(n, seed=seed, n_events=8, relational_rate=0.75)
    for k in range(0, n, 10):
        text = "\n\n".join(t for _, t in docs[k:k + 10])
        (directory / f"part{k // 10}.txt").write_text(text + "\n", encoding="utf-8")


def write_ere(path, n, seed):
    recs = make_ere_examples(n, seed=seed, n_events=8, relational_rate=0.75)
    path.write_text("".join(json.dumps(r) + "\n" for r in recs), encoding="utf-8")


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_docs(root / "docs")
    (root / "tiny.yaml").write_text(yaml.safe_dump(TINY), encoding="utf-8")
    for name, n, seed in (("train", 12, 1), ("dev", 8, 2), ("test", 60, 3)):
        write_ere(root / f"{name}.jsonl", n, seed)
    cfg = ["--config", str(root / "tiny.yaml")]
    assert main(["build-corpus", "--input-dir", str(root / "docs"), "--out",
                 str(root / "corpus.jsonl"), "--budget", "40", *cfg]) == 0
    assert main(["pretrain", "--corpus", str(root / "corpus.jsonl"), "--out-dir",
                 str(root / "pt"), *cfg]) == 0
    assert main(["finetune", "--checkpoint", str(root / "pt" / "final.npz"), "--train",
                 str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"), "--test",
                 str(root / "test.jsonl"), "--out-dir", str(root / "ft"), *cfg]) == 0
    return root, cfg


def test_build_corpus_outputs(run):
    root, _ = run
    samples = read_jsonl(root / "corpus.jsonl")
    kinds = [s.kind for s in samples]
    assert kinds.count(TEMPORAL) == 20 and kinds.count(EVENT) == 20
    stats = json.loads((root / "corpus.stats.json").read_text(encoding="utf-8"))
    assert stats["temporal_samples"] == 20
    assert (root / "corpus.events.txt").exists()


def test_build_corpus_is_deterministic(run, tmp_path):
    root, cfg = run
    main(["build-corpus", "--input-dir", str(root / "docs"), "--out", str(tmp_path / "a.jsonl"),
          "--budget", "40", *cfg])
    assert (tmp_path / "a.jsonl").read_bytes() == (root / "corpus.jsonl").read_bytes()


def test_build_corpus_empty_dir(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["build-corpus", "--input-dir", str(tmp_path / "empty"), "--out",
                 str(tmp_path / "o.jsonl")]) == 0
    assert (tmp_path / "o.jsonl").read_text(encoding="utf-8") == ""
    stats = json.loads((tmp_path / "o.stats.json").read_text(encoding="utf-8"))
    assert stats["passages"] == 0 and stats["temporal_samples"] == 0


def test_pretrain_outputs(run):
    root, _ = run
    pt = root / "pt"
    assert {"final.npz", "ckpt_6.npz", "ckpt_12.npz", "loss_log.csv", "config.yaml",
            "vocab.json"} <= {p.name for p in pt.iterdir()}
    header = (pt / "loss_log.csv").read_text(encoding="utf-8").splitlines()[0]
    for col in ("l_temporal", "l_event", "l_disc", "l_joint"):
        assert col in header
    _, meta = load_checkpoint(pt / "final.npz")
    assert meta["kind"] == "pretrain" and meta["vocab"] == Vocabulary.load(pt / "vocab.json").tokens


def test_pretrain_resume_matches_uninterrupted(run, tmp_path):
    root, cfg = run
    assert main(["pretrain", "--resume", str(root / "pt" / "ckpt_6.npz"), "--corpus",
                 str(root / "corpus.jsonl"), "--out-dir", str(tmp_path / "r")]) == 0
    a, _ = load_checkpoint(root / "pt" / "final.npz")
    b, _ = load_checkpoint(tmp_path / "r" / "final.npz")
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_rerun_from_written_config(run, tmp_path):
    root, _ = run
    assert main(["pretrain", "--corpus", str(root / "corpus.jsonl"), "--out-dir",
                 str(tmp_path / "again"), "--config", str(root / "pt" / "config.yaml")]) == 0
    a, _ = load_checkpoint(root / "pt" / "final.npz")
    b, _ = load_checkpoint(tmp_path / "again" / "final.npz")
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)


def test_finetune_summary(run, capsys):
    root, _ = run
    summary = json.loads((root / "ft" / "summary.json").read_text(encoding="utf-8"))
    vals = [e["test"]["micro_f1"] for e in summary["per_seed"]]
    assert [e["seed"] for e in summary["per_seed"]] == [5, 7] and summary["split"] == "test"
    assert summary["mean"] == pytest.approx(np.mean(vals), abs=1e-15)
    assert summary["std"] == pytest.approx(np.std(vals), abs=1e-15)
    assert (root / "ft" / "seed5.npz").exists() and (root / "ft" / "seed7.npz").exists()
    rows = [json.loads(l) for l in (root / "ft" / "dev_log.jsonl").read_text().splitlines()]
    assert len(rows) == 4


def test_finetune_random_init_and_fraction(run, tmp_path, capsys):
    root, cfg = run
    assert main(["finetune", "--random-init", "--vocab", str(root / "pt" / "vocab.json"),
                 "--train", str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"),
                 "--out-dir", str(tmp_path / "rnd"), "--train-fraction", "0.5",
                 "--epochs", "1", *cfg]) == 0
    out = capsys.readouterr().out
    assert "±" in out and "dev" in out
    written = yaml.safe_load((tmp_path / "rnd" / "config.yaml").read_text(encoding="utf-8"))
    assert written["finetune"]["train_fraction"] == 0.5


def test_finetune_grid(run, tmp_path, capsys):
    root, cfg = run
    assert main(["finetune", "--checkpoint", str(root / "pt" / "final.npz"), "--train",
                 str(root / "train.jsonl"), "--dev", str(root / "dev.jsonl"), "--out-dir",
                 str(tmp_path / "g"), "--epochs", "1", "--grid", *cfg]) == 0
    assert capsys.readouterr().out.count("grid lr=") == 2


def test_evaluate_dump_and_mcnemar(run, tmp_path):
    root, _ = run
    ck = str(root / "ft" / "seed5.npz")
    assert main(["evaluate", "--checkpoint", ck, "--data", str(root / "test.jsonl"),
                 "--dump", str(tmp_path / "a.jsonl"), "--report", str(tmp_path / "r.json")]) == 0
    dump = [json.loads(l) for l in (tmp_path / "a.jsonl").read_text().splitlines()]
    assert len(dump) == 60 and all(d["prediction"] in ERE_LABELS for d in dump)
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["metrics"]["accuracy"] == pytest.approx(np.mean([d["correct"] for d in dump]))
    assert main(["evaluate", "--checkpoint", ck, "--data", str(root / "test.jsonl"),
                 "--compare", str(tmp_path / "a.jsonl"), "--report", str(tmp_path / "s.json")]) == 0
    mc = json.loads((tmp_path / "s.json").read_text())["mcnemar"]
    assert mc["statistic"] == 0.0 and mc["p_value"] == 1.0


def test_evaluate_perfect_predictions(run, tmp_path):
    root, _ = run
    model, meta = load_checkpoint(root / "ft" / "seed5.npz")
    from econet.tasks import predict
    vocab = Vocabulary(meta["vocab"])
    exs = read_task_jsonl(root / "test.jsonl", "ere", ERE_LABELS)
    recs = [json.loads(l) for l in (root / "test.jsonl").read_text().splitlines()]
    for r, ex in zip(recs, exs):
        r["relation"] = ERE_LABELS[predict(model, ex, vocab)]
    (tmp_path / "self.jsonl").write_text("".join(json.dumps(r) + "\n" for r in recs))
    main(["evaluate", "--checkpoint", str(root / "ft" / "seed5.npz"), "--data",
          str(tmp_path / "self.jsonl"), "--report", str(tmp_path / "p.json")])
    m = json.loads((tmp_path / "p.json").read_text())["metrics"]
    assert m["accuracy"] == 1.0 and m["micro_f1"] in (0.0, 1.0)


def test_attn_report_matches_module(run, tmp_path):
    root, _ = run
    cks = [str(root / "pt" / "ckpt_6.npz"), str(root / "pt" / "final.npz")]
    assert main(["attn-report", "--checkpoint", *cks, "--data", str(root / "test.jsonl"),
                 "--out-dir", str(tmp_path / "a")]) == 0
    got = json.loads((tmp_path / "a" / "attention.json").read_text())
    models = [load_checkpoint(c)[0] for c in cks]
    vocab = Vocabulary.load(root / "pt" / "vocab.json")
    exs = read_task_jsonl(root / "test.jsonl", "ere", ERE_LABELS)
    rep = attention.category_report(exs, load_default(), models, vocab)
    assert got["counts"] == rep.counts and got["rows"] == rep.rows()
    assert sum(rep.counts.values()) >= len(exs)


def test_heatmap_command(run, tmp_path):
    root, _ = run
    data = root / "test.jsonl"
    for seed in (5, 7):
        main(["evaluate", "--checkpoint", str(root / "ft" / f"seed{seed}.npz"), "--data",
              str(data), "--dump", str(tmp_path / f"d{seed}.jsonl")])
    assert main(["heatmap", "--data", str(data), "--pred-a", str(tmp_path / "d5.jsonl"),
                 "--pred-b", str(tmp_path / "d7.jsonl"), "--min-count", "10", "--out",
                 str(tmp_path / "h.json")]) == 0
    h = json.loads((tmp_path / "h.json").read_text())
    assert h["categories"] and all(v >= 10 for v in h["counts"].values())
    assert len(h["matrix"]) == len(h["categories"]) and len(h["matrix"][0]) == 4
    assert main(["heatmap", "--data", str(data), "--pred-a", str(tmp_path / "d5.jsonl"),
                 "--pred-b", str(tmp_path / "d5.jsonl"), "--out", str(tmp_path / "z.json")]) == 0
    assert json.loads((tmp_path / "z.json").read_text())["categories"] == []


def test_error_exit_codes(run, tmp_path, capsys):
    root, cfg = run
    assert main(["pretrain", "--corpus", str(tmp_path / "nope.jsonl"), "--out-dir",
                 str(tmp_path / "x")]) == EXIT_CODES["input"]
    assert "input error" in capsys.readouterr().err
    assert main(["build-corpus", "--input-dir", str(tmp_path / "nope"), "--out",
                 str(tmp_path / "o.jsonl")]) == EXIT_CODES["input"]
    (tmp_path / "bad.yaml").write_text("model:\n  depth: 3\n")
    assert main(["build-corpus", "--input-dir", str(root / "docs"), "--out",
                 str(tmp_path / "o.jsonl"), "--config", str(tmp_path / "bad.yaml")]
                ) == EXIT_CODES["config"]
    (tmp_path / "broken.jsonl").write_text("{not json\n")
    assert main(["evaluate", "--checkpoint", str(root / "ft" / "seed5.npz"), "--data",
                 str(tmp_path / "broken.jsonl")]) == EXIT_CODES["data"]
    assert main(["evaluate", "--checkpoint", str(root / "pt" / "final.npz"), "--data",
                 str(root / "test.jsonl")]) == EXIT_CODES["model"]
    assert main(["finetune", "--train", str(root / "train.jsonl"), "--out-dir",
                 str(tmp_path / "f"), *cfg]) == EXIT_CODES["config"]
    (tmp_path / "short.yaml").write_text(yaml.safe_dump({**TINY, "model": {
        **TINY["model"], "max_seq_len": 8}}))
    assert main(["pretrain", "--corpus", str(root / "corpus.jsonl"), "--out-dir",
                 str(tmp_path / "s"), "--config", str(tmp_path / "short.yaml")]
                ) == EXIT_CODES["data"]
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2
