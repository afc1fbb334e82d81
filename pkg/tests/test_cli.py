import json

import numpy as np
import pytest

from magprop.cli import main


def run(capsys, *args):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def gdir(tmp_path, capsys):
    d = tmp_path / "g"
    code, _, _ = run(capsys, "synth", "--n", 120, "--homophily", 0.2, "--classes", 3,
                     "--feature-dim", 6, "--seed", 1, "--out-dir", d)
    assert code == 0
    return d


def test_synth_manifest(gdir):
    man = json.loads((gdir / "manifest.json").read_text())
    assert man["seed"] == 1 and "synth" in man["timings"]
    assert (gdir / "edges.tsv").exists() and (gdir / "features.bin").exists()


def test_train_eval_roundtrip(gdir, tmp_path, capsys):
    out = tmp_path / "run"
    code, stdout, _ = run(capsys, "train", "--graph", gdir, "--epochs", 10, "--mode", "MAP++",
                          "--re-encode-every", 5, "--seed", 2, "--out-dir", out)
    assert code == 0
    final = json.loads(stdout)
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 10
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["seed"] == 2 and len(man["inputs"]) >= 2
    assert all(len(h) == 64 for h in man["inputs"].values())
    code, stdout, _ = run(capsys, "eval", "--graph", gdir, "--run", out, "--out-dir", tmp_path / "e")
    assert code == 0
    assert json.loads(stdout)["accuracy"] == pytest.approx(final["test_metric"])


def test_train_deterministic_metrics(gdir, tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "train", "--graph", gdir, "--epochs", 6, "--re-encode-every", 3,
                   "--out-dir", tmp_path / name)[0] == 0
    assert (tmp_path / "a" / "metrics.jsonl").read_bytes() == (tmp_path / "b" / "metrics.jsonl").read_bytes()


def test_propagate_then_train(gdir, tmp_path, capsys):
    code, _, _ = run(capsys, "propagate", "--graph", gdir, "--K", 2, "--q-strategy", "fixed:0.2",
                     "--out-dir", tmp_path / "p")
    assert code == 0
    code, _, _ = run(capsys, "train", "--graph", gdir, "--K", 2, "--mode", "fixed", "--q", 0.2,
                     "--epochs", 4, "--stack", tmp_path / "p" / "stack", "--out-dir", tmp_path / "t")
    assert code == 0
    code, _, err = run(capsys, "train", "--graph", gdir, "--K", 3, "--mode", "fixed", "--epochs", 4,
                       "--stack", tmp_path / "p" / "stack", "--out-dir", tmp_path / "t2")
    assert code == 2 and err.startswith("magprop: error: stage=")


def test_encode_q(gdir, tmp_path, capsys):
    z = np.random.default_rng(0).dirichlet(np.ones(3), size=120)
    np.save(tmp_path / "z.npy", z)
    code, _, _ = run(capsys, "encode-q", "--graph", gdir, "--soft-labels", tmp_path / "z.npy",
                     "--out-dir", tmp_path / "q")
    assert code == 0
    header = (tmp_path / "q" / "q.tsv").read_text().splitlines()[0]
    assert header == "u\tv\tq_topo\tq_feat\tq_star"


def test_qcompare(gdir, tmp_path, capsys):
    code, out, _ = run(capsys, "qcompare", "--graph", gdir, "--strategies", "fixed:0,fixed:0.25",
                       "--seeds", 2, "--epochs", 5, "--out-dir", tmp_path / "qc")
    assert code == 0 and len(out.splitlines()) == 3
    code, _, err = run(capsys, "qcompare", "--graph", gdir, "--strategies", "nonsense",
                       "--out-dir", tmp_path / "qc2")
    assert code == 2 and "stage=qcompare" in err


def test_sync(capsys):
    code, out, _ = run(capsys, "sync", "--n", 100, "--p", 1.0)
    assert code == 0
    rows = out.splitlines()[1:]
    assert rows and all(float(r.split(",")[3]) >= 1 - 1e-9 for r in rows)
    code, out, _ = run(capsys, "sync", "--n", 20, "--p", 0.5, "--seeds", 5)
    assert len(out.splitlines()) == 6
    code, _, err = run(capsys, "sync", "--p", 1.5)
    assert code == 2 and err.count("\n") == 1 and "usage" in err


def _pipeline_files(tmp_path, gdir):
    cfg = {"edges": str(gdir / "edges.tsv"), "features": str(gdir / "features.bin"),
           "labels": str(gdir / "labels.tsv"),
           "split": {"train_per_class": 10, "val": 30, "test": None, "seed": 0},
           "train": {"epochs": 5, "re_encode_every": 2, "mode": "MAP++"}}
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg))
    return p, cfg


def test_pipeline(gdir, tmp_path, capsys):
    cfg_path, _ = _pipeline_files(tmp_path, gdir)
    code, out, _ = run(capsys, "pipeline", "--config", cfg_path, "--out-dir", tmp_path / "pipe")
    assert code == 0
    assert "test_metric" in json.loads(out)
    for name in ("manifest.json", "metrics.jsonl", "checkpoint.npz", "q_star.npy"):
        assert (tmp_path / "pipe" / name).exists()


def test_pipeline_missing_features(gdir, tmp_path, capsys):
    cfg_path, cfg = _pipeline_files(tmp_path, gdir)
    cfg["features"] = str(tmp_path / "missing.bin")
    cfg_path.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "pipeline", "--config", cfg_path, "--out-dir", tmp_path / "pipe")
    assert code == 2 and "missing.bin" in err and err.count("\n") == 1


def test_dry_run_touches_nothing(gdir, tmp_path, capsys):
    cfg_path, _ = _pipeline_files(tmp_path, gdir)
    out = tmp_path / "dry"
    assert run(capsys, "pipeline", "--config", cfg_path, "--dry-run", "--out-dir", out)[0] == 0
    assert run(capsys, "train", "--graph", gdir, "--dry-run", "--out-dir", out)[0] == 0
    assert not out.exists()


def test_error_paths(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--graph", tmp_path / "nope")
    assert code == 2 and "nope" in err and err.startswith("magprop: error: stage=")
    code, _, err = run(capsys, "frobnicate")
    assert code == 2 and err.count("\n") == 1
    code, _, err = run(capsys)
    assert code == 2
    bad = tmp_path / "e.tsv"
    bad.write_text("0\t9\n")
    from magprop.io import write_features
    write_features(tmp_path / "x.bin", np.ones((3, 2)))
    code, _, err = run(capsys, "ingest", "--edges", bad, "--features", tmp_path / "x.bin",
                       "--out-dir", tmp_path / "o")
    assert code == 1 and "e.tsv:1" in err and err.count("\n") == 1


def test_threads_env(gdir, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MAGPROP_THREADS", "1")
    assert run(capsys, "train", "--graph", gdir, "--epochs", 2, "--threads", 1,
               "--out-dir", tmp_path / "t")[0] == 0
