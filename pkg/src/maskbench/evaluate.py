"""Batch separation and per-utterance metric computation."""
import csv
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import diffcore as dc
from .objective import MetricConfig, improvement, neg_snr_numpy, pit_align, si_sdr

EVAL_COLUMNS = ("utt_id", "sisdri", "sdri", "snri", "perm")


def worker_count():
    try:
        return max(1, int(os.environ.get("MASKBENCH_THREADS", "1")))
    except ValueError:
        return 1


def separate_all(model, mixtures, sources=None, batch_size=10):
    """Estimates (n, C, L) for every mixture, batched, without taping."""
    n = len(mixtures)
    starts = list(range(0, n, batch_size))
    needs_refs = model.config.head.kind == "oversep" and model.config.head.grouping == "dynamic"

    def run(s):
        refs = sources[s:s + batch_size] if needs_refs else None
        with dc.no_grad():
            return model.forward(mixtures[s:s + batch_size], refs).data.astype(np.float64)

    workers = min(worker_count(), len(starts)) or 1
    if workers == 1:
        parts = [run(s) for s in starts]
    else:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, starts))
    return np.concatenate(parts) if parts else np.zeros((0,))


def utterance_metrics(est, refs, mixture, config, with_sdr=True):
    """PIT-aligned mean SI-SDRi / SDRi / SNRi over the sources of one utterance."""
    perm = pit_align(est, refs, lambda e, r: si_sdr(e, r, config.zero_mean, config.clamp_db))
    aligned = est[list(perm)]
    C = len(refs)
    row = {
        "perm": perm,
        "sisdri": float(np.mean([improvement("si_sdr", aligned[k], refs[k], mixture, config) for k in range(C)])),
        "snri": float(np.mean([improvement("snr", aligned[k], refs[k], mixture, config) for k in range(C)])),
        "neg_snr": neg_snr_numpy(aligned, refs, config.clamp_db),
    }
    if with_sdr:
        row["sdri"] = float(np.mean([improvement("sdr", aligned[k], refs[k], mixture, config) for k in range(C)]))
    return row


def evaluate_arrays(ests, mixtures, sources, ids=None, config=None, with_sdr=True):
    config = config or MetricConfig()
    ids = ids or [str(i) for i in range(len(mixtures))]
    rows = []
    for uid, est, mix, refs in zip(ids, ests, mixtures, sources):
        row = utterance_metrics(est, refs, mix, config, with_sdr)
        row["utt_id"] = uid
        rows.append(row)
    return rows


def evaluate_model(model, mixtures, sources, ids=None, config=None, with_sdr=True, batch_size=10):
    ests = separate_all(model, mixtures, sources, batch_size)
    return evaluate_arrays(ests, mixtures, sources, ids, config, with_sdr)


def summarize(rows):
    keys = [k for k in ("sisdri", "sdri", "snri", "neg_snr") if rows and k in rows[0]]
    return {k: float(np.mean([r[k] for r in rows])) for k in keys}


def write_eval_csv(rows, path):
    mean = summarize(rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(EVAL_COLUMNS)
        for r in sorted(rows, key=lambda r: r["utt_id"]):
            w.writerow([r["utt_id"], f"{r['sisdri']:.6f}", f"{r.get('sdri', float('nan')):.6f}",
                        f"{r['snri']:.6f}", " ".join(str(p) for p in r["perm"])])
        w.writerow(["mean", f"{mean['sisdri']:.6f}", f"{mean.get('sdri', float('nan')):.6f}",
                    f"{mean['snri']:.6f}", ""])


def read_eval_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return rows
