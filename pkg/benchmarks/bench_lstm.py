"""Time the numba and numpy LSTM recurrence kernels side by side.

    python3 benchmarks/bench_lstm.py [--repeat 5] [--json out.json]

Shapes cover the two DPRNN paths of the toy and full models: intra-chunk runs
are short with a wide batch (chunks x utterances), inter-chunk runs are long
with a narrow one.  The crossover between the two paths sets ``AUTO_WIDTH``.
"""
import argparse
import json
import timeit

import numpy as np

from maskbench.diffcore import kernels as K

SHAPES = [  # (T, B, H)
    (10, 2, 8), (50, 4, 32), (100, 4, 32), (20, 100, 32), (400, 2, 32),
    (100, 8, 128), (100, 100, 128), (400, 4, 128),
]


def _inputs(T, B, H, rng):
    gx = rng.standard_normal((T, B, 4 * H))
    w = 0.1 * rng.standard_normal((H, 4 * H))
    return gx, w


def _time(fn, repeat):
    fn()  # warm-up (jit compile on first call)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def bench(shape, repeat, rng):
    T, B, H = shape
    gx, w = _inputs(T, B, H, rng)
    dhs = rng.standard_normal((T, B, H))
    hs, cs, acts = K.lstm_forward_numpy(gx, w)
    hs_j, cs_j, acts_j = K._lstm_forward_jit(gx, w)
    diff = max(np.abs(hs - hs_j).max(), np.abs(K.lstm_backward_numpy(dhs, acts, cs, w)
                                               - K._lstm_backward_jit(dhs, acts, cs, w)).max())
    row = {"T": T, "B": B, "H": H, "width": B * H, "max_abs_diff": float(diff)}
    for name, fwd, bwd in (("numpy", K.lstm_forward_numpy, K.lstm_backward_numpy),
                           ("numba", K._lstm_forward_jit, K._lstm_backward_jit)):
        row[f"{name}_fwd_ms"] = 1e3 * _time(lambda: fwd(gx, w), repeat)
        row[f"{name}_bwd_ms"] = 1e3 * _time(lambda: bwd(dhs, acts, cs, w), repeat)
    row["speedup"] = (row["numpy_fwd_ms"] + row["numpy_bwd_ms"]) / (row["numba_fwd_ms"] + row["numba_bwd_ms"])
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write the rows as JSON")
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(0)
    rows = [bench(s, args.repeat, rng) for s in SHAPES]
    print(f"{'T':>4} {'B':>4} {'H':>4} {'B*H':>6}  {'numpy f/b ms':>15}  {'numba f/b ms':>15}  "
          f"{'speedup':>7}  {'max|diff|':>9}  auto")
    for r in rows:
        auto = "numba" if r["width"] < K.AUTO_WIDTH else "numpy"
        print(f"{r['T']:4d} {r['B']:4d} {r['H']:4d} {r['width']:6d}  "
              f"{r['numpy_fwd_ms']:7.2f}/{r['numpy_bwd_ms']:7.2f}  {r['numba_fwd_ms']:7.2f}/{r['numba_bwd_ms']:7.2f}  "
              f"{r['speedup']:6.2f}x  {r['max_abs_diff']:9.1e}  {auto}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
