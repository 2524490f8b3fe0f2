"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The training criteria (6, 7) share one set of toy runs: the data is generated
once and nine runs (three heads x three seeds) are trained for
``TREND_EPOCHS`` epochs each (about 75 minutes on one core); by then the
validation curves have flattened, while at 4 epochs heads were still ranked by
early learning speed.
"""
import hashlib
import json
import time

import numpy as np
import pytest

from maskbench import cli
from maskbench.config import ExperimentConfig, load_config
from maskbench.datagen import load_manifest, load_split
from maskbench.evaluate import evaluate_model, read_eval_csv, summarize
from maskbench.oracle import oracle_sisdri
from maskbench.report import build_report, write_report
from maskbench.trainkit import load_checkpoint, read_checkpoint
from maskbench.verify import suite_collapse, suite_complexity, suite_grad, suite_grouping, suite_pit

TREND_EPOCHS = 16
TREND_PRESETS = ("toy", "toy_mlp64", "toy_p4")
SEEDS = (0, 1, 2)


def emit(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\nACCEPTANCE {number}: {'PASS' if passed else 'FAIL'}  {detail}")


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def _worst(results, prefix):
    sel = [r for r in results if r.name.startswith(prefix)]
    assert sel, prefix
    return sel


# --- 1, 2: linear collapse --------------------------------------------------

@pytest.fixture(scope="module")
def collapse():
    return timed(suite_collapse)


def test_criterion_1_identity_collapse(collapse, capsys):
    results, secs = collapse
    sel = _worst(results, "identity_")
    worst = max(r.measured for r in sel)
    ok = all(r.passed for r in sel) and worst < 1e-10 and secs < 10
    emit(capsys, 1, ok, f"max rel err {worst:.2e} over P=4,8,16 x 100 draws (< 1e-10), {secs:.1f}s (< 10s)")
    assert ok


def test_criterion_2_relu_does_not_collapse(collapse, capsys):
    results, secs = collapse
    sel = _worst(results, "relu_")
    least = min(r.measured for r in sel)
    ok = all(r.passed for r in sel) and least > 1e-3 and secs < 10
    emit(capsys, 2, ok, f"min mean rel dev {least:.3f} (> 1e-3), {secs:.1f}s (< 10s)")
    assert ok


# --- 3: gradients ------------------------------------------------------------

def test_criterion_3_gradient_suite(capsys):
    results, secs = timed(suite_grad)
    worst = max(results, key=lambda r: r.measured)
    ok = all(r.passed for r in results) and all(r.measured < 1e-4 for r in results) and secs < 120
    emit(capsys, 3, ok, f"{len(results)} checks, worst {worst.name} {worst.measured:.2e} (< 1e-4), "
                        f"{secs:.1f}s (< 120s)")
    assert ok


# --- 4: grouping -------------------------------------------------------------

def test_criterion_4_grouping(capsys):
    results, secs = timed(suite_grouping)
    by = {r.name: r for r in results}
    mism, gap = by["dynamic_matches_brute_force"].measured, by["dynamic_le_deterministic"].measured
    ok = mism == 0 and gap <= 0 and secs < 30
    emit(capsys, 4, ok, f"{mism} mismatches vs brute force, max(dyn - det) {gap:.3g} (<= 0), {secs:.1f}s (< 30s)")
    assert ok


# --- 5: metrics --------------------------------------------------------------

def test_criterion_5_metric_properties(capsys):
    results, secs = timed(suite_pit)
    ok = all(r.passed for r in results) and secs < 5
    detail = ", ".join(f"{r.name} {r.measured:.1e}" for r in results)
    emit(capsys, 5, ok, f"{detail}; {secs:.2f}s (< 5s)")
    assert ok


# --- 6, 7: training ------------------------------------------------------------

@pytest.fixture(scope="module")
def toy_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    assert cli.main(["gen-data", "--config", "toy", "--out", str(root / "data")]) == 0
    manifest = root / "data" / "manifest.json"
    runs, cpu = {}, {}
    for preset in TREND_PRESETS:
        d = load_config(preset).to_dict()
        d["train"]["max_epochs"] = TREND_EPOCHS
        cfg = root / f"{preset}.json"
        cfg.write_text(json.dumps(d))
        for seed in SEEDS:
            out = root / f"{preset}_s{seed}"
            t0 = time.process_time()
            code = cli.main(["train", "--config", str(cfg), "--out", str(out), "--seed", str(seed),
                             "--manifest", str(manifest), "--quiet"])
            cpu[preset, seed] = time.process_time() - t0
            assert code == 0, (preset, seed)
            runs[preset, seed] = out
    return root, manifest, runs, cpu


def test_criterion_6_toy_training_and_oracle(toy_runs, capsys):
    root, manifest, runs, cpu = toy_runs
    history = read_checkpoint(runs["toy", 0] / "best.ckpt")[0]["state"]["history"]
    best = max(h["valid_sisdri"] for h in history)
    minutes = cpu["toy", 0] / 60
    _, mix, src = load_split(load_manifest(manifest), "test")
    oracle = oracle_sisdri(mix, src)
    ok = best >= 6.0 and minutes <= 30 and oracle >= 15.0
    emit(capsys, 6, ok, f"toy valid SI-SDRi {best:.2f} dB (>= 6) in {minutes:.1f} CPU-min (<= 30); "
                        f"ideal-mask oracle {oracle:.2f} dB (>= 15)")
    assert ok


def test_criterion_7_trend_report(toy_runs, capsys):
    root, _, runs, _ = toy_runs
    out = root / "report.csv"
    assert cli.main(["report", "--runs", *map(str, runs.values()), "--out", str(out)]) == 0
    _, _, _, trends, _ = build_report([str(r) for r in runs.values()])
    parts = []
    for t in trends:
        assert t["seeds"] == list(SEEDS), t
        parts.append(f"{t['name']} {t['delta']:+.2f} dB [" + ", ".join(f"{d:+.2f}" for d in t["per_seed"]) + "]")
    ok = all(t["passed"] for t in trends) and len(trends) == 2
    emit(capsys, 7, ok, "; ".join(parts) + " (each >= -0.20)")
    assert ok


# --- 8: complexity -------------------------------------------------------------

def test_criterion_8_complexity(capsys):
    results = suite_complexity()
    by = {r.name: r for r in results}
    exact = by["params_closed_form_exact"]
    p, m = by["full_params_vs_2.6M"], by["full_macs_vs_21.5G"]
    emit(capsys, 8, exact.passed, f"closed-form param mismatch {exact.measured} (== 0); "
                                  f"informational: params {p.measured:,.0f} vs 2.6M ({'within' if p.passed else 'outside'} 20%), "
                                  f"MACs {m.measured / 1e9:.2f}G vs 21.5G ({'within' if m.passed else 'outside'} 20%)")
    assert exact.passed


# --- 9: determinism ---------------------------------------------------------------

DET = {"data": {"n_train": 6, "n_valid": 3, "n_test": 3, "duration": 0.25},
       "model": {"frontend": {"window": 16, "stride": 8, "feature_dim": 8},
                 "separator": {"num_blocks": 1, "rnn_hidden": 8, "chunk_size": None},
                 "head": {"kind": "shallow", "num_sources": 2}},
       "train": {"max_epochs": 2, "batch_size": 2, "precision": "float64"}}


def _tree_hash(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def test_criterion_9_determinism(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MASKBENCH_THREADS", "1")
    cfg = tmp_path / "det.json"
    cfg.write_text(json.dumps(DET))
    for name in ("a", "b"):
        assert cli.main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / f"data_{name}")]) == 0
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / name), "--quiet",
                         "--manifest", str(tmp_path / f"data_{name}" / "manifest.json")]) == 0
    same_data = _tree_hash(tmp_path / "data_a") == _tree_hash(tmp_path / "data_b")
    same_hist = (tmp_path / "a" / "history.csv").read_bytes() == (tmp_path / "b" / "history.csv").read_bytes()
    same_eval = (tmp_path / "a" / "eval.csv").read_bytes() == (tmp_path / "b" / "eval.csv").read_bytes()

    # checkpoint round trip: float32 training so stored weights are exact
    d32 = json.loads(json.dumps(DET))
    d32["train"]["precision"] = "float32"
    exp = ExperimentConfig.from_dict(d32)
    cfg32 = tmp_path / "det32.json"
    cfg32.write_text(json.dumps(d32))
    assert cli.main(["train", "--config", str(cfg32), "--out", str(tmp_path / "c"), "--quiet",
                     "--manifest", str(tmp_path / "data_a" / "manifest.json")]) == 0
    header = read_checkpoint(tmp_path / "c" / "best.ckpt")[0]
    model, _ = load_checkpoint(tmp_path / "c" / "best.ckpt")
    ids, mix, src = load_split(load_manifest(tmp_path / "data_a" / "manifest.json"), "valid")
    re_eval = summarize(evaluate_model(model, mix, src, ids, exp.eval, with_sdr=False))["sisdri"]
    drift_valid = abs(re_eval - header["metrics"]["valid_sisdri"])
    assert cli.main(["eval", "--checkpoint", str(tmp_path / "c" / "best.ckpt"), "--out", str(tmp_path / "re.csv"),
                     "--manifest", str(tmp_path / "data_a" / "manifest.json")]) == 0
    first = {r["utt_id"]: r for r in read_eval_csv(tmp_path / "c" / "eval.csv")}
    second = {r["utt_id"]: r for r in read_eval_csv(tmp_path / "re.csv")}
    drift_test = max(abs(float(first[k][m]) - float(second[k][m])) for k in first for m in ("sisdri", "sdri", "snri"))
    drift = max(drift_valid, drift_test)
    ok = same_data and same_hist and same_eval and drift < 1e-6 and np.isfinite(drift)
    emit(capsys, 9, ok, f"dataset bytes {'equal' if same_data else 'DIFFER'}, history {'equal' if same_hist else 'DIFFER'}, "
                        f"eval CSV {'equal' if same_eval else 'DIFFER'}; checkpoint metric drift {drift:.1e} dB (< 1e-6)")
    assert ok
