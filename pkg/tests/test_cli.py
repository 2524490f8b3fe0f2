import csv
import hashlib
import json

import numpy as np
import pytest

from maskbench import cli
from maskbench.config import ExperimentConfig
from maskbench.errors import TrainingError
from maskbench.evaluate import EVAL_COLUMNS, read_eval_csv
from maskbench.report import REPORT_COLUMNS

TINY = {"data": {"n_train": 4, "n_valid": 2, "n_test": 3, "duration": 0.25},
        "model": {"frontend": {"window": 16, "stride": 8, "feature_dim": 8},
                  "separator": {"num_blocks": 1, "rnn_hidden": 8, "chunk_size": None},
                  "head": {"kind": "shallow", "num_sources": 2}},
        "train": {"max_epochs": 1, "batch_size": 2}}


def _cfg(tmp_path, name="tiny.json", **overrides):
    d = json.loads(json.dumps(TINY))
    for section, vals in overrides.items():
        d[section].update(vals)
    p = tmp_path / name
    p.write_text(json.dumps(d))
    return str(p)


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_gen_data_is_deterministic(tmp_path, capsys):
    cfg = _cfg(tmp_path)
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "b")]) == 0
    assert _tree_hash(tmp_path / "a") == _tree_hash(tmp_path / "b")
    assert cli.main(["gen-data", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "5"]) == 0
    assert _tree_hash(tmp_path / "a") != _tree_hash(tmp_path / "c")
    assert "manifest.json" in capsys.readouterr().out


def test_config_errors_exit_2(tmp_path):
    bad = _cfg(tmp_path, "bad.json", data={"num_sources": 1})
    assert cli.main(["gen-data", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["gen-data", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x")]) in (2, 3)
    assert cli.main(["eval", "--manifest", "m.json", "--out", "o.csv"]) == 2


def test_io_error_exit_3(tmp_path):
    cfg = _cfg(tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["gen-data", "--config", cfg, "--out", str(blocker / "sub")]) == 3
    assert cli.main(["eval", "--model", "identity", "--manifest", str(tmp_path / "missing.json"),
                     "--out", str(tmp_path / "o.csv")]) == 3


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _cfg(root)
    assert cli.main(["train", "--config", cfg, "--out", str(root / "run"), "--quiet"]) == 0
    return root, cfg


def test_train_outputs(trained):
    root, _ = trained
    run = root / "run"
    for name in ("config.json", "best.ckpt", "last.ckpt", "history.csv", "eval.csv", "eval.csv.meta.json"):
        assert (run / name).exists(), name
    meta = json.loads((run / "eval.csv.meta.json").read_text())
    assert meta["seed"] == 0 and meta["split"] == "test" and "config" in meta


def test_eval_csv_columns_and_rows(trained, tmp_path):
    root, cfg = trained
    out = tmp_path / "e.csv"
    code = cli.main(["eval", "--checkpoint", str(root / "run" / "best.ckpt"), "--config", cfg,
                     "--manifest", str(root / "run" / "data" / "manifest.json"), "--out", str(out)])
    assert code == 0
    with open(out) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == EVAL_COLUMNS
    assert [r[0] for r in rows[1:]] == ["test_0", "test_1", "test_2", "mean"]
    assert json.loads((tmp_path / "e.csv.meta.json").read_text())["seed"] == 0


def test_eval_identity_is_zero_and_oracle_high(trained, tmp_path):
    root, _ = trained
    manifest = str(root / "run" / "data" / "manifest.json")
    assert cli.main(["eval", "--model", "identity", "--manifest", manifest, "--out", str(tmp_path / "i.csv")]) == 0
    mean = [r for r in read_eval_csv(tmp_path / "i.csv") if r["utt_id"] == "mean"][0]
    assert abs(float(mean["sisdri"])) < 1e-9 and abs(float(mean["sdri"])) < 1e-9
    assert cli.main(["eval", "--model", "oracle", "--manifest", manifest, "--out", str(tmp_path / "o.csv")]) == 0
    mean = [r for r in read_eval_csv(tmp_path / "o.csv") if r["utt_id"] == "mean"][0]
    assert float(mean["sisdri"]) > 10


def test_eval_mismatch_exit_5(trained, tmp_path):
    root, _ = trained
    other = _cfg(tmp_path, "other.json", model={"head": {"kind": "deep_mlp", "num_sources": 2, "mlp_hidden": 4}})
    code = cli.main(["eval", "--checkpoint", str(root / "run" / "best.ckpt"), "--config", other,
                     "--manifest", str(root / "run" / "data" / "manifest.json"), "--out", str(tmp_path / "x.csv")])
    assert code == 5
    three = _cfg(tmp_path, "three.json", data={"num_sources": 3},
                 model={"head": {"kind": "shallow", "num_sources": 3}})
    assert cli.main(["gen-data", "--config", three, "--out", str(tmp_path / "d3")]) == 0
    code = cli.main(["eval", "--checkpoint", str(root / "run" / "best.ckpt"),
                     "--manifest", str(tmp_path / "d3" / "manifest.json"), "--out", str(tmp_path / "y.csv")])
    assert code == 5


def test_train_divergence_exit_4(tmp_path, monkeypatch):
    import maskbench.trainkit.train as _  # noqa: F401
    import sys
    mod = sys.modules["maskbench.trainkit.train"]

    def boom(*a, **k):
        raise TrainingError("diverged at epoch 1")
    monkeypatch.setattr(mod, "train", boom)
    assert cli.main(["train", "--config", _cfg(tmp_path), "--out", str(tmp_path / "r"), "--quiet"]) == 4


def test_eval_threads_do_not_change_results(trained, tmp_path, monkeypatch):
    root, _ = trained
    args = ["eval", "--checkpoint", str(root / "run" / "best.ckpt"),
            "--manifest", str(root / "run" / "data" / "manifest.json")]
    monkeypatch.setenv("MASKBENCH_THREADS", "1")
    assert cli.main(args + ["--out", str(tmp_path / "a.csv")]) == 0
    monkeypatch.setenv("MASKBENCH_THREADS", "3")
    assert cli.main(args + ["--out", str(tmp_path / "b.csv")]) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_verify_exit_codes(monkeypatch):
    assert cli.main(["verify", "--suite", "pit"]) == 0
    import maskbench.verify as v
    failing = v.PropertyResult("pit", "forced", False, 1.0, "< 0", False)
    monkeypatch.setattr(v, "run_suites", lambda name: [failing])
    assert cli.main(["verify", "--suite", "pit"]) == 1


def _fake_run(root, name, head, blocks=2, seed=0, sisdri=10.0):
    d = json.loads(json.dumps(TINY))
    d["model"]["head"] = dict({"num_sources": 2}, **head)
    d["model"]["separator"]["num_blocks"] = blocks
    d["train"]["seed"] = seed
    run = root / name
    run.mkdir()
    (run / "config.json").write_text(json.dumps(ExperimentConfig.from_dict(d).to_dict()))
    cols = ",".join(EVAL_COLUMNS)
    (run / "eval.csv").write_text(f"{cols}\ntest_0,{sisdri},{sisdri},{sisdri},0 1\n"
                                  f"mean,{sisdri},{sisdri},{sisdri},\n")
    return str(run)


def test_report_rows_missing_and_trends(tmp_path, capsys):
    runs = []
    for s in range(3):
        runs.append(_fake_run(tmp_path, f"b{s}", {"kind": "shallow"}, seed=s, sisdri=10.0 + s))
        runs.append(_fake_run(tmp_path, f"m{s}", {"kind": "deep_mlp", "mlp_hidden": 64}, seed=s, sisdri=11.0 + s))
    runs.append(_fake_run(tmp_path, "p4", {"kind": "oversep", "num_outputs": 4}, sisdri=9.0))
    runs.append(_fake_run(tmp_path, "deep", {"kind": "shallow"}, blocks=4, sisdri=12.0))
    (tmp_path / "broken").mkdir()
    out = tmp_path / "report.csv"
    assert cli.main(["report", "--runs", *runs, str(tmp_path / "broken"), "--out", str(out)]) == 0
    captured = capsys.readouterr()
    with open(out) as fh:
        rows = list(csv.DictReader(fh))
    assert tuple(rows[0].keys()) == REPORT_COLUMNS
    t1 = [r for r in rows if r["model"].startswith("oversep/")]
    t2 = [r for r in rows if r["model"].startswith("capacity/")]
    assert len(t1) == 8 and len(t2) == 6
    by = {r["model"]: r for r in rows}
    assert float(by["capacity/baseline"]["sisdri"]) == pytest.approx(11.0)
    assert float(by["capacity/MLP(L)"]["sisdri"]) == pytest.approx(12.0)
    assert float(by["capacity/deeper x2"]["sisdri"]) == pytest.approx(12.0)
    assert by["capacity/P=16"]["sisdri"] == "" and int(by["capacity/P=16"]["params"]) > 0
    assert float(by["trend/MLP(L) vs baseline/mean_delta"]["sisdri"]) == pytest.approx(1.0)
    assert "missing run: capacity/P=16" in captured.err and "unreadable run" in captured.err
    assert "MLP(L) vs baseline: mean delta +1.00" in captured.out and "PASS" in captured.out
    assert "P=4 vs P=2 (relu)" in captured.out
    meta = json.loads((tmp_path / "report.csv.meta.json").read_text())
    assert sorted(r["seed"] for r in meta["runs"]) == [0, 0, 0, 0, 1, 1, 2, 2]
    assert np.isfinite(float(by["oversep/P=4 f=relu"]["sisdri"]))
