"""Epoch loop: PIT negative-SNR training with Adam, clipping, LR decay and early stopping.

The learning rate is halved when the epoch-mean training loss has not
improved for ``lr_patience_epochs`` epochs; training stops when the
validation loss has not improved for ``early_stop_patience`` epochs.
"""
import csv
import json
import logging
import time
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ..errors import TrainingError
from ..evaluate import evaluate_model, summarize
from ..model import SeparationModel
from ..objective import neg_snr_loss, pairwise_neg_snr, pit_loss
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import AdamState, adam_step, clip_grad_norm
from .schedule import PlateauTracker

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "train_loss", "valid_loss", "valid_sisdri", "lr")


def batch_loss(model, mixtures, sources, clamp_db=50.0):
    """Scalar training loss for one batch; dynamic grouping already resolves permutation."""
    head = model.config.head
    est = model.forward(mixtures, sources)
    if head.kind == "oversep" and head.grouping == "dynamic" and head.num_outputs != head.num_sources:
        return neg_snr_loss(est, sources.astype(est.dtype), clamp_db)
    loss, _ = pit_loss(est, sources.astype(est.dtype), lambda e, r: pairwise_neg_snr(e, r, clamp_db))
    return loss


def train_step(model, optimizer, mixtures, sources, schedule):
    with dc.Tape():
        loss = batch_loss(model, mixtures, sources, schedule.clamp_db)
        dc.backward(loss)
    grads = {k: p.grad for k, p in model.params.items() if p.grad is not None}
    for p in model.params.values():
        p.grad = None
    grads = clip_grad_norm(grads, schedule.clip_norm)
    adam_step(model.params, grads, optimizer)
    return loss.item()


def _write_history(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for h in history:
            w.writerow([h["epoch"], repr(h["train_loss"]), repr(h["valid_loss"]),
                        repr(h["valid_sisdri"]), repr(h["lr"])])


def train(experiment, data, out_dir, resume=None, progress=None):
    """Run the full schedule and return a summary dict.

    ``data`` maps split name to ``(ids, mixtures, sources)`` arrays (train
    and valid are used).  Writes ``best.ckpt``, ``last.ckpt`` and
    ``history.csv`` under ``out_dir``.
    """
    sched = experiment.train
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _, train_mix, train_src = data["train"]
    valid_ids, valid_mix, valid_src = data["valid"]

    if resume is not None:
        model, info = load_checkpoint(resume, expect_model=experiment.model)
        optimizer = info["optimizer"] or AdamState(learning_rate=sched.learning_rate)
        st = info["state"]
        history = st.get("history", [])
        start_epoch = info["epoch"] + 1
        tracker = PlateauTracker(**{k: st[k] for k in ("best_train", "best_valid", "lr_wait", "stop_wait")
                                    if k in st})
    else:
        model = SeparationModel(experiment.model, seed=sched.seed, dtype=sched.precision)
        optimizer = AdamState(learning_rate=sched.learning_rate)
        history, start_epoch = [], 1
        tracker = PlateauTracker()

    t0 = time.time()
    stopped = "max_epochs"
    n = len(train_mix)
    for epoch in range(start_epoch, sched.max_epochs + 1):
        order = np.random.default_rng([sched.seed, epoch]).permutation(n)
        losses = []
        lr_used = optimizer.learning_rate
        for s in range(0, n, sched.batch_size):
            idx = order[s:s + sched.batch_size]
            try:
                loss = train_step(model, optimizer, train_mix[idx], train_src[idx], sched)
            except (FloatingPointError, TrainingError) as exc:
                raise TrainingError(f"diverged at epoch {epoch}, step {optimizer.step}: {exc}; "
                                    f"last good checkpoint: {out / 'last.ckpt'}") from exc
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}; last good checkpoint: {out / 'last.ckpt'}")
            losses.append(loss)
        train_loss = float(np.mean(losses))
        rows = evaluate_model(model, valid_mix, valid_src, valid_ids, experiment.eval,
                              with_sdr=False, batch_size=sched.eval_batch_size)
        summary = summarize(rows)
        valid_loss, valid_sisdri = summary["neg_snr"], summary["sisdri"]
        history.append({"epoch": epoch, "train_loss": train_loss, "valid_loss": valid_loss,
                        "valid_sisdri": valid_sisdri, "lr": lr_used})

        improved, stop = tracker.update(train_loss, valid_loss, optimizer, sched)
        state = dict(tracker.to_dict(), history=history)
        metrics = {"train_loss": train_loss, "valid_loss": valid_loss, "valid_sisdri": valid_sisdri}
        if improved:
            save_checkpoint(model, out / "best.ckpt", experiment, epoch, metrics, optimizer, state)
        save_checkpoint(model, out / "last.ckpt", experiment, epoch, metrics, optimizer, state)
        _write_history(history, out / "history.csv")
        msg = (f"epoch {epoch:3d}  train {train_loss:8.4f}  valid {valid_loss:8.4f}  "
               f"SI-SDRi {valid_sisdri:6.2f} dB  lr {lr_used:.2e}  {time.time() - t0:6.0f}s")
        log.info(msg)
        if progress:
            progress(msg)
        if stop:
            stopped = "early_stop"
            break
        if sched.max_minutes is not None and time.time() - t0 > 60 * sched.max_minutes:
            stopped = "time_budget"
            break

    meta = {"config": experiment.to_dict(), "seed": sched.seed, "stopped": stopped}
    (out / "history.csv.meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n",
                                               encoding="utf-8")
    best = max(history, key=lambda h: -h["valid_loss"]) if history else None
    return {"out_dir": str(out), "best_checkpoint": str(out / "best.ckpt"), "history": history,
            "best": best, "stopped": stopped, "seconds": time.time() - t0}
