"""``maskbench`` command line: gen-data, train, eval, verify, report.

Exit codes: 0 ok, 1 verification failure, 2 config error, 3 I/O error,
4 training divergence, 5 checkpoint/config mismatch.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ExperimentConfig, load_config
from .datagen import load_manifest, load_split, make_dataset
from .errors import CheckpointError, ConfigError, InputError, TrainingError
from .evaluate import evaluate_arrays, evaluate_model, summarize, write_eval_csv
from .oracle import ideal_ratio_mask, identity_separator

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5

log = logging.getLogger("maskbench")


class CommandError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _load_experiment(path, seed=None):
    exp = load_config(path)
    return exp.with_seed(seed) if seed is not None else exp


def _read_manifest(path):
    try:
        return load_manifest(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(EXIT_IO, f"cannot read manifest {path}: {exc}") from None


def _ensure_dataset(exp, out, manifest_arg):
    manifest = manifest_arg or exp.data.manifest
    if manifest:
        return _read_manifest(manifest)
    data_dir = out / "data"
    if (data_dir / "manifest.json").exists():
        m = _read_manifest(data_dir / "manifest.json")
        cfg = exp.to_dict()["data"]
        cfg.pop("manifest", None)
        if m["config"] == cfg:
            return m
    make_dataset(exp.data, data_dir)
    return _read_manifest(data_dir / "manifest.json")


# ---------------------------------------------------------------------------
# commands


def cmd_gen_data(args):
    exp = _load_experiment(args.config)
    if args.seed is not None:
        d = exp.to_dict()
        d["data"]["seed"] = args.seed
        exp = ExperimentConfig.from_dict(d)
    try:
        manifest = make_dataset(exp.data, args.out)
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from None
    print(manifest["path"])
    return EXIT_OK


def cmd_train(args):
    from .trainkit.checkpoint import load_checkpoint
    from .trainkit.train import train
    exp = _load_experiment(args.config, args.seed)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        manifest = _ensure_dataset(exp, out, args.manifest)
        data = {s: load_split(manifest, s) for s in ("train", "valid", "test")}
        _write_json(out / "config.json", exp.to_dict())
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from None
    if len(data["train"][0]) == 0 or len(data["valid"][0]) == 0:
        raise CommandError(EXIT_CONFIG, "train and valid splits must be non-empty")
    if data["train"][2].shape[1] != exp.data.num_sources:
        raise CommandError(EXIT_MISMATCH, "manifest source count differs from the config")
    try:
        result = train(exp, data, out, resume=args.resume, progress=None if args.quiet else print)
    except TrainingError as exc:
        raise CommandError(EXIT_DIVERGED, str(exc)) from None
    except CheckpointError as exc:
        raise CommandError(EXIT_MISMATCH, str(exc)) from None
    print(f"best checkpoint: {result['best_checkpoint']}  (stopped: {result['stopped']})")
    if len(data["test"][0]) and not args.no_test_eval:
        model, info = load_checkpoint(result["best_checkpoint"])
        ids, mix, src = data["test"]
        rows = evaluate_model(model, mix, src, ids, exp.eval, batch_size=exp.train.eval_batch_size)
        _write_eval(rows, out / "eval.csv", {"config": exp.to_dict(), "seed": exp.train.seed,
                                             "checkpoint": result["best_checkpoint"],
                                             "manifest": str(Path(manifest["root"]) / "manifest.json"),
                                             "split": "test", "epoch": info["epoch"]})
        print(f"test mean SI-SDRi {summarize(rows)['sisdri']:.2f} dB -> {out / 'eval.csv'}")
    return EXIT_OK


def _write_eval(rows, path, meta):
    meta = dict(meta, summary=summarize(rows))
    write_eval_csv(rows, path)
    _write_json(str(path) + ".meta.json", meta)


def cmd_eval(args):
    from .trainkit.checkpoint import load_checkpoint
    manifest = _read_manifest(args.manifest)
    try:
        ids, mix, src = load_split(manifest, args.split)
    except OSError as exc:
        raise CommandError(EXIT_IO, f"reading {args.split} audio: {exc}") from None
    if not ids:
        raise CommandError(EXIT_CONFIG, f"split {args.split!r} is empty in {args.manifest}")
    meta = {"manifest": str(args.manifest), "split": args.split}
    if args.checkpoint is None:
        exp = ExperimentConfig()
        if args.config:
            exp = _load_experiment(args.config)
        if args.model == "identity":
            ests = [identity_separator(m, src.shape[1]) for m in mix]
        else:
            ests = [ideal_ratio_mask(m, s) for m, s in zip(mix, src)]
        rows = evaluate_arrays(ests, mix, src, ids, exp.eval)
        meta.update(model=args.model, config=exp.to_dict(), seed=exp.seed)
    else:
        try:
            expect = _load_experiment(args.config).model if args.config else None
            model, info = load_checkpoint(args.checkpoint, expect_model=expect)
        except CheckpointError as exc:
            raise CommandError(EXIT_MISMATCH, str(exc)) from None
        exp = info["experiment"]
        if src.shape[1] != model.num_sources:
            raise CommandError(EXIT_MISMATCH, f"checkpoint separates {model.num_sources} sources, "
                                              f"manifest has {src.shape[1]}")
        if manifest["config"].get("sample_rate") != model.config.frontend.sample_rate:
            raise CommandError(EXIT_MISMATCH, "checkpoint and manifest sample rates differ")
        rows = evaluate_model(model, mix, src, ids, exp.eval, batch_size=exp.train.eval_batch_size)
        meta.update(model="checkpoint", checkpoint=str(args.checkpoint), config=exp.to_dict(),
                    seed=exp.train.seed, epoch=info["epoch"])
    try:
        _write_eval(rows, args.out, meta)
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from None
    s = summarize(rows)
    print(f"{len(rows)} utterances  SI-SDRi {s['sisdri']:.3f} dB  SDRi {s['sdri']:.3f} dB  "
          f"SNRi {s['snri']:.3f} dB -> {args.out}")
    return EXIT_OK


def cmd_verify(args):
    from .verify import run_suites
    results = run_suites(args.suite)
    gating = [r for r in results if not r.informational]
    failed = [r for r in gating if not r.passed]
    print(f"{len(gating) - len(failed)}/{len(gating)} properties passed")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_report(args):
    from .report import build_report, write_report
    rows, missing, unreadable, trends, runs = build_report(args.runs)
    for d in unreadable:
        print(f"unreadable run (needs config.json and eval.csv): {d}", file=sys.stderr)
    for lab in missing:
        print(f"missing run: {lab}", file=sys.stderr)
    for t in trends:
        if t["passed"] is None:
            print(f"trend {t['name']}: no paired seeds")
        else:
            per = ", ".join(f"{d:+.2f}" for d in t["per_seed"])
            print(f"trend {t['name']}: mean delta {t['delta']:+.2f} dB over seeds {t['seeds']} "
                  f"[{per}] {'PASS' if t['passed'] else 'FAIL'}")
    try:
        write_report(rows, args.out, runs)
    except OSError as exc:
        raise CommandError(EXIT_IO, str(exc)) from None
    print(f"{len(rows)} rows -> {args.out}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="maskbench", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a mixture dataset")
    p.add_argument("--config", required=True, help="JSON file or preset name")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None, help="override data.seed")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model and evaluate its best checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--manifest", default=None, help="dataset manifest (default: generate under OUT/data)")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")
    p.add_argument("--seed", type=int, default=None, help="override the training seed")
    p.add_argument("--no-test-eval", action="store_true")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-utterance metrics CSV")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--model", choices=("identity", "oracle"), default=None,
                   help="evaluate a reference separator instead of a checkpoint")
    p.add_argument("--config", default=None, help="expected config; mismatch exits 5")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run property suites")
    p.add_argument("--suite", choices=("collapse", "grad", "pit", "grouping", "complexity", "all"),
                   default="all")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("report", help="aggregate runs into comparison tables")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and (args.checkpoint is None) == (args.model is None):
        print("error: give exactly one of --checkpoint or --model", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
