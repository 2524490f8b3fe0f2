"""Aggregate trained runs into the overseparation and head-capacity comparison tables.

A run directory holds ``config.json`` (resolved experiment) and ``eval.csv``
(test-set rows plus a ``mean`` row).  Rows are identified by their head and
separator settings relative to the shallowest separator among the runs.
"""
import copy
import csv
import json
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, model_config_from_dict
from .evaluate import read_eval_csv
from .trainkit.complexity import closed_form_params, count_macs

REPORT_COLUMNS = ("model", "sisdri", "sdri", "params", "macs")

OVERSEP_ROWS = [(P, f) for f in ("relu", "identity") for P in (2, 4, 8, 16)]
CAPACITY_ROWS = ("baseline", "P=16", "MLP(S)", "MLP(L)", "deeper x1.5", "deeper x2")
TRENDS = (("MLP(L) vs baseline", "capacity/MLP(L)", "capacity/baseline"),
          ("P=4 vs P=2 (relu)", "oversep/P=4 f=relu", "oversep/P=2 f=relu"))
TREND_MARGIN_DB = 0.2


def oversep_label(P, f):
    return f"oversep/P={P} f={f}"


def run_labels(model_cfg, base_blocks):
    """Every table row a model configuration fills (possibly none)."""
    head, blocks = model_cfg.head, model_cfg.separator.num_blocks
    labels = []
    C = head.num_sources
    if blocks == base_blocks:
        if head.kind == "shallow" or (head.kind == "oversep" and head.num_outputs == C):
            labels.append(oversep_label(C, head.activation))
            if head.activation == "relu":
                labels.append("capacity/baseline")
        elif head.kind == "oversep" and head.grouping == "deterministic":
            labels.append(oversep_label(head.num_outputs, head.activation))
            if head.num_outputs == 16 and head.activation == "relu":
                labels.append("capacity/P=16")
        elif head.kind == "deep_mlp" and head.activation == "relu":
            if head.mlp_hidden == 16:
                labels.append("capacity/MLP(S)")
            elif head.mlp_hidden == 64:
                labels.append("capacity/MLP(L)")
    elif head.kind == "shallow" and head.activation == "relu":
        if 2 * blocks == 3 * base_blocks:
            labels.append("capacity/deeper x1.5")
        elif blocks == 2 * base_blocks:
            labels.append("capacity/deeper x2")
    return labels


def variant_model(base, label, base_blocks):
    """ModelConfig for ``label`` derived from the baseline configuration."""
    d = copy.deepcopy(base.to_dict())
    head = d["head"]
    head.update(kind="shallow", num_outputs=None, activation="relu", grouping="deterministic")
    d["separator"]["num_blocks"] = base_blocks
    name = label.split("/", 1)[1]
    if label.startswith("oversep/"):
        P = int(name.split()[0][2:])
        head["activation"] = name.split("f=")[1]
        if P != head["num_sources"]:
            head.update(kind="oversep", num_outputs=P)
    elif name == "P=16":
        head.update(kind="oversep", num_outputs=16)
    elif name.startswith("MLP"):
        head.update(kind="deep_mlp", mlp_hidden=16 if name == "MLP(S)" else 64)
    elif name == "deeper x1.5":
        d["separator"]["num_blocks"] = base_blocks * 3 // 2
    elif name == "deeper x2":
        d["separator"]["num_blocks"] = base_blocks * 2
    return model_config_from_dict(d)


def all_labels():
    return [oversep_label(P, f) for P, f in OVERSEP_ROWS] + [f"capacity/{n}" for n in CAPACITY_ROWS]


def load_run(run_dir):
    run_dir = Path(run_dir)
    cfg_path, eval_path = run_dir / "config.json", run_dir / "eval.csv"
    if not cfg_path.exists() or not eval_path.exists():
        return None
    experiment = ExperimentConfig.from_dict(json.loads(cfg_path.read_text(encoding="utf-8")))
    mean = next((r for r in read_eval_csv(eval_path) if r["utt_id"] == "mean"), None)
    if mean is None:
        return None
    return {"dir": str(run_dir), "experiment": experiment, "seed": experiment.train.seed,
            "sisdri": float(mean["sisdri"]), "sdri": float(mean["sdri"])}


def _fmt(v, digits=4):
    return "" if v is None or (isinstance(v, float) and not np.isfinite(v)) else f"{v:.{digits}f}"


def build_report(run_dirs):
    """Return (rows, missing_labels, unreadable_dirs, trends, runs)."""
    runs, unreadable = [], []
    for d in run_dirs:
        r = load_run(d)
        (runs if r else unreadable).append(r or str(d))
    if not runs:
        return [], all_labels(), unreadable, [], []
    base_blocks = min(r["experiment"].model.separator.num_blocks for r in runs)
    by_label = {}
    for r in runs:
        for lab in run_labels(r["experiment"].model, base_blocks):
            by_label.setdefault(lab, []).append(r)
    ref = next((r for r in runs if "capacity/baseline" in run_labels(r["experiment"].model, base_blocks)), runs[0])
    base_model = ref["experiment"].model

    rows, missing = [], []
    for lab in all_labels():
        cfg = variant_model(base_model, lab, base_blocks)
        params, macs = closed_form_params(cfg), count_macs(cfg, 4.0)
        group = by_label.get(lab, [])
        if not group:
            missing.append(lab)
        si = float(np.mean([g["sisdri"] for g in group])) if group else None
        sd = float(np.mean([g["sdri"] for g in group])) if group else None
        rows.append({"model": lab, "sisdri": _fmt(si), "sdri": _fmt(sd), "params": params, "macs": macs})
    for lab in all_labels():
        for g in sorted(by_label.get(lab, []), key=lambda g: g["seed"]):
            rows.append({"model": f"seed/{lab}/seed={g['seed']}", "sisdri": _fmt(g["sisdri"]),
                         "sdri": _fmt(g["sdri"]), "params": "", "macs": ""})

    trends = []
    for name, a, b in TRENDS:
        sa = {g["seed"]: g["sisdri"] for g in by_label.get(a, [])}
        sb = {g["seed"]: g["sisdri"] for g in by_label.get(b, [])}
        seeds = sorted(set(sa) & set(sb))
        if not seeds:
            trends.append({"name": name, "seeds": [], "delta": None, "passed": None})
            continue
        delta = float(np.mean([sa[s] for s in seeds]) - np.mean([sb[s] for s in seeds]))
        trends.append({"name": name, "seeds": seeds, "per_seed": [sa[s] - sb[s] for s in seeds],
                       "delta": delta, "passed": delta >= -TREND_MARGIN_DB})
        rows.append({"model": f"trend/{name}/mean_delta", "sisdri": _fmt(delta), "sdri": "",
                     "params": "", "macs": ""})
    return rows, missing, unreadable, trends, runs


def write_report(rows, path, runs=()):
    """CSV table plus a ``.meta.json`` sidecar with each run's config and seed."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    meta = {"runs": [{"dir": r["dir"], "seed": r["seed"], "config": r["experiment"].to_dict()}
                     for r in runs]}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n",
                                              encoding="utf-8")
