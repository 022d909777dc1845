import csv
import json

import pytest
from click.testing import CliRunner

from tagex.cli import main


@pytest.fixture()
def runner():
    return CliRunner()


def _tiny_model_config(tmp_path, **kw):
    cfg = dict(variant="opentag", embed_dim=12, hidden=8, attention_dim=16,
               epochs=4, last_k_average=2, batch_size=4, seed=0, dropout=0.2)
    cfg.update(kw)
    path = tmp_path / "model_config.json"
    path.write_text(json.dumps(cfg))
    return path


def _synth(runner, tmp_path, samples=24, seed=1, name="corpus.jsonl"):
    out = tmp_path / name
    result = runner.invoke(main, ["synth", "--seed", str(seed),
                                  "--samples", str(samples),
                                  "--out", str(out)])
    assert result.exit_code == 0, result.output
    return out


def test_synth_writes_corpus_and_split(runner, tmp_path):
    out = _synth(runner, tmp_path)
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 24
    sidecar = json.loads((tmp_path / "corpus.jsonl.split.json").read_text())
    assert len(sidecar["train_ids"]) + len(sidecar["test_ids"]) == 24


def test_synth_is_byte_deterministic(runner, tmp_path):
    a = _synth(runner, tmp_path, name="a.jsonl")
    b = _synth(runner, tmp_path, name="b.jsonl")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a.jsonl.split.json").read_bytes() == (
        tmp_path / "b.jsonl.split.json").read_bytes()


def test_train_then_evaluate_round_trip(runner, tmp_path):
    corpus = _synth(runner, tmp_path)
    config = _tiny_model_config(tmp_path)
    ckpt = tmp_path / "model.ckpt"
    result = runner.invoke(main, ["train", "--corpus", str(corpus),
                                  "--config", str(config),
                                  "--out", str(ckpt)])
    assert result.exit_code == 0, result.output
    assert ckpt.exists()
    metrics = tmp_path / "model.ckpt.metrics.jsonl"
    assert metrics.exists()
    assert len(metrics.read_text().strip().splitlines()) == 4

    result = runner.invoke(main, ["evaluate", "--ckpt", str(ckpt),
                                  "--corpus", str(corpus),
                                  "--history", str(metrics)])
    assert result.exit_code == 0, result.output
    assert "micro" in result.output
    assert "last-2 epoch avg" in result.output


def test_train_metrics_are_byte_deterministic(runner, tmp_path):
    corpus = _synth(runner, tmp_path)
    config = _tiny_model_config(tmp_path)
    for name in ("m1", "m2"):
        result = runner.invoke(main, ["train", "--corpus", str(corpus),
                                      "--config", str(config),
                                      "--out", str(tmp_path / name)])
        assert result.exit_code == 0, result.output
    assert (tmp_path / "m1.metrics.jsonl").read_bytes() == (
        tmp_path / "m2.metrics.jsonl").read_bytes()
    assert (tmp_path / "m1").read_bytes() == (tmp_path / "m2").read_bytes()


def test_evaluate_with_disjoint_split(runner, tmp_path):
    corpus = _synth(runner, tmp_path, samples=60)
    config = _tiny_model_config(tmp_path)
    ckpt = tmp_path / "model.ckpt"
    runner.invoke(main, ["train", "--corpus", str(corpus),
                         "--config", str(config), "--out", str(ckpt)])
    result = runner.invoke(main, ["evaluate", "--ckpt", str(ckpt),
                                  "--corpus", str(corpus),
                                  "--split", "disjoint",
                                  "--out", str(tmp_path / "report.json")])
    assert result.exit_code == 0, result.output
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["micro"]) == {"precision", "recall", "f1"}


def test_attention_export_shapes(runner, tmp_path):
    corpus = _synth(runner, tmp_path)
    config = _tiny_model_config(tmp_path)
    ckpt = tmp_path / "model.ckpt"
    runner.invoke(main, ["train", "--corpus", str(corpus),
                         "--config", str(config), "--out", str(ckpt)])
    result = runner.invoke(main, ["attention-export", "--ckpt", str(ckpt),
                                  "--text", "acme smoked duck dog food",
                                  "--out", str(tmp_path / "heat")])
    assert result.exit_code == 0, result.output
    with open(tmp_path / "heat" / "heatmap.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 6 and all(len(r) == 6 for r in rows)
    twin = json.loads((tmp_path / "heat" / "heatmap.json").read_text())
    parsed = [[float(v) for v in row[1:]] for row in rows[1:]]
    assert twin["matrix"] == parsed


def test_attention_export_rejects_bilstm(runner, tmp_path):
    corpus = _synth(runner, tmp_path)
    config = _tiny_model_config(tmp_path, variant="bilstm")
    ckpt = tmp_path / "model.ckpt"
    runner.invoke(main, ["train", "--corpus", str(corpus),
                         "--config", str(config), "--out", str(ckpt)])
    result = runner.invoke(main, ["attention-export", "--ckpt", str(ckpt),
                                  "--text", "acme duck food",
                                  "--out", str(tmp_path / "heat")])
    assert result.exit_code == 1
    assert "attention" in result.output


def test_active_sim_curves_are_deterministic(runner, tmp_path):
    corpus = _synth(runner, tmp_path, samples=30)
    config = _tiny_model_config(tmp_path, epochs=0, last_k_average=0)
    args = ["active-sim", "--corpus", str(corpus), "--strategy", "TF",
            "--seeds", "1", "--config", str(config), "--initial", "6",
            "--batch", "3", "--rounds", "2", "--committee-epochs", "2"]
    r1 = runner.invoke(main, args + ["--out", str(tmp_path / "sim1")])
    assert r1.exit_code == 0, r1.output
    r2 = runner.invoke(main, args + ["--out", str(tmp_path / "sim2")])
    assert r2.exit_code == 0, r2.output
    assert (tmp_path / "sim1" / "curves-TF.jsonl").read_bytes() == (
        tmp_path / "sim2" / "curves-TF.jsonl").read_bytes()
    rows = [json.loads(line) for line in
            (tmp_path / "sim1" / "curves-TF.jsonl").read_text().splitlines()]
    assert [r["round"] for r in rows] == [0, 1]
    assert all("queried_ids" in r and "post_round_metrics" in r for r in rows)


def test_synth_accepts_a_spec_file(runner, tmp_path):
    spec = {
        "schema": "tagex-synthspec-v1",
        "attributes": {"brand": ["acme", "zorn"],
                       "flavor": ["smoked duck", "beef"]},
        "templates": ["<brand> <flavor> dog food"],
        "sample_count": 8,
        "owa_fraction": 0.0,
        "value_groups": 2,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = tmp_path / "custom.jsonl"
    result = runner.invoke(main, ["synth", "--spec", str(spec_path),
                                  "--seed", "2", "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = [json.loads(l) for l in out.read_text().strip().splitlines()]
    assert len(lines) == 8
    assert all("dog food" in rec["text"] for rec in lines)


def test_unknown_flag_exits_2(runner):
    result = runner.invoke(main, ["train", "--nonsense"])
    assert result.exit_code == 2


def test_missing_corpus_exits_2(runner, tmp_path):
    result = runner.invoke(main, ["train", "--corpus",
                                  str(tmp_path / "nope.jsonl"),
                                  "--out", str(tmp_path / "x")])
    assert result.exit_code == 2


def test_runtime_failure_exits_1(runner, tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{broken json\n")
    result = runner.invoke(main, ["train", "--corpus", str(bad),
                                  "--out", str(tmp_path / "x")])
    assert result.exit_code == 1
    assert "line 1" in result.output
