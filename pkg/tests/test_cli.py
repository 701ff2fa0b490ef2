import csv
import json

import numpy as np
import pytest

from kcan import cli
from kcan.params import load_snapshot

FAST = "embed_dim = 8\ntower = 8,6,4\nout_dim = 4\nneighbors = 5\ntarget_batch = 64\nkg_batch = 256\nepochs = 2\n"


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "fast.cfg").write_text(FAST)
    assert cli.main(["synth", "--out", str(root / "data"), "--users", "30", "--items", "20", "--seed", "1"]) == 0
    assert cli.main(["train", "--data-dir", str(root / "data"), "--out", str(root / "run"),
                     "--config", str(root / "fast.cfg")]) == 0
    return root


def test_train_outputs(run):
    out = run / "run"
    for name in ("snapshot.npz", "loss_trace.csv", "config.txt", "id_map.tsv"):
        assert (out / name).exists()
    _, meta, extra = load_snapshot(out / "snapshot.npz")
    assert meta["config_hash"] in (out / "config.txt").read_text()
    assert "attention" in extra


def test_eval_writes_report(run, capsys):
    assert cli.main(["eval", "--data-dir", str(run / "data"), "--snapshot", str(run / "run/snapshot.npz"),
                     "--out", str(run / "report.json")]) == 0
    rep = json.loads((run / "report.json").read_text())
    assert set(rep["metrics"]) == {"hit@10", "ndcg@10", "auc"}
    assert rep["config_hash"] in capsys.readouterr().out


def test_eval_is_reproducible(run):
    args = ["eval", "--data-dir", str(run / "data"), "--snapshot", str(run / "run/snapshot.npz"), "--out"]
    cli.main(args + [str(run / "r1.json")])
    cli.main(args + [str(run / "r2.json")])
    assert (run / "r1.json").read_bytes() == (run / "r2.json").read_bytes()


def test_explain_records(run):
    path = run / "explain.jsonl"
    assert cli.main(["explain", "--data-dir", str(run / "data"), "--snapshot", str(run / "run/snapshot.npz"),
                     "--target", "u0,i1", "--target", "u0,i2", "--out", str(path)]) == 0
    records = [json.loads(line) for line in path.read_text().splitlines()]
    fields = {"target", "head", "relation", "tail", "hop", "pi", "alpha", "alpha_by_layer", "config_hash"}
    assert all(fields <= set(r) for r in records)
    targets = {tuple(r["target"]) for r in records}
    assert len(targets) == 2
    by_edge = {}
    for r in records:
        by_edge.setdefault((r["head"], r["relation"], r["tail"]), []).append(r)
    shared = [v for v in by_edge.values() if len({tuple(r["target"]) for r in v}) == 2]
    assert shared, "the two targets share the user's click edges"
    for r in records:
        assert 0 <= r["pi"] <= 1 and 0 <= r["alpha"] <= 1
        assert r["alpha_by_layer"][0] == r["alpha"]


def test_sweep_l2_five_rows(run):
    path = run / "sweep.csv"
    assert cli.main(["sweep", "--data-dir", str(run / "data"), "--sweep-param", "l2", "--epochs", "1",
                     "--config", str(run / "fast.cfg"), "--out", str(path)]) == 0
    rows = list(csv.reader(path.open()))
    assert rows[0][0] == "l2" and len(rows) == 6
    assert [float(r[0]) for r in rows[1:]] == [1e-1, 1e-2, 1e-3, 1e-4, 1e-5]


def test_ablate(run):
    assert cli.main(["ablate", "--data-dir", str(run / "data"), "--epochs", "1", "--config", str(run / "fast.cfg"),
                     "--out", str(run / "abl")]) == 0
    rows = list(csv.reader((run / "abl/ablation.csv").open()))
    assert [r[0] for r in rows[1:]] == ["full", "no_lc", "no_gk", "no_both"]


def test_gradcheck_pass_and_fail(monkeypatch, capsys):
    assert cli.main(["gradcheck"]) == 0
    assert "max_rel_err" in capsys.readouterr().out
    monkeypatch.setattr(cli, "grad_check", lambda *a, **k: 0.5)
    assert cli.main(["gradcheck"]) == cli.EXIT_CHECK


def test_exit_codes(run, tmp_path):
    assert cli.main([]) == cli.EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--bogus"])
    assert exc.value.code == cli.EXIT_USAGE
    assert cli.main(["eval", "--data-dir", str(run / "data"), "--snapshot", str(tmp_path / "missing.npz")]) == cli.EXIT_DATA
    assert cli.main(["eval", "--data-dir", str(run / "data")]) == cli.EXIT_USAGE
    (tmp_path / "bad.cfg").write_text("hops = banana\n")
    assert cli.main(["train", "--data-dir", str(run / "data"), "--out", str(tmp_path / "o"),
                     "--config", str(tmp_path / "bad.cfg")]) == cli.EXIT_USAGE
    bad = tmp_path / "baddata"
    bad.mkdir()
    (bad / "interactions.tsv").write_text("u0\ti0\n")
    (bad / "triples.tsv").write_text("a\tb\n")
    assert cli.main(["train", "--data-dir", str(bad), "--out", str(tmp_path / "o2")]) == cli.EXIT_DATA
    assert cli.main(["synth", "--out", str(tmp_path / "s"), "--users", "0"]) == cli.EXIT_USAGE


def test_snapshot_from_other_dataset_rejected(run, tmp_path):
    cli.main(["synth", "--out", str(tmp_path / "other"), "--users", "12", "--items", "10"])
    assert cli.main(["eval", "--data-dir", str(tmp_path / "other"), "--snapshot",
                     str(run / "run/snapshot.npz")]) == cli.EXIT_DATA
