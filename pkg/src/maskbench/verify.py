"""Property suites behind ``maskbench verify``.

Each check returns a :class:`PropertyResult` with the measured quantity and
its threshold.  Informational results are printed but never fail a suite.
"""
import itertools
import time
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .frontend import FrontendConfig
from .maskheads import (
    HeadConfig, collapse_linear_head, deterministic_grouping, dynamic_grouping, group_masks,
    init_head_params, oversep_forward, shallow_forward,
)
from .model import ModelConfig, SeparationModel
from .objective import neg_snr_numpy, pairwise_neg_snr, pit_loss, sdr_fir, si_sdr, snr
from .separator import SeparatorConfig
from .trainkit.complexity import closed_form_params, count_macs, count_params

SUITES = ("collapse", "grad", "pit", "grouping", "complexity")

REFERENCE_PARAMS = 2.6e6
REFERENCE_MACS = 21.5e9


@dataclass
class PropertyResult:
    suite: str
    name: str
    passed: bool
    measured: float
    threshold: str
    informational: bool = False

    def line(self):
        tag = "INFO" if self.informational else ("PASS" if self.passed else "FAIL")
        return f"[{tag}] {self.suite}/{self.name}: measured={self.measured:.3e} ({self.threshold})"


def _rel(a, b):
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


# ---------------------------------------------------------------------------
# collapse

def collapse_deviation(P, activation, draws=100, C=2, N=6, H=5, T=7, seed=0):
    """Per-draw relative deviation between grouped oversep masks and the collapsed head."""
    rng = np.random.default_rng(seed)
    scheme = deterministic_grouping(P, C)
    cfg = HeadConfig(kind="oversep", num_sources=C, num_outputs=P, activation=activation)
    devs = []
    for _ in range(draws):
        params = init_head_params(cfg, H, N, rng)
        x = dc.Tensor(rng.standard_normal((H, T)))
        with dc.no_grad():
            grouped = group_masks(oversep_forward(x, params, activation), scheme).data
            collapsed = shallow_forward(x, collapse_linear_head(params, scheme, "identity"), activation).data
        devs.append(_rel(grouped, collapsed))
    return np.array(devs)


def suite_collapse():
    out = []
    for P in (4, 8, 16):
        dev = collapse_deviation(P, "identity", seed=P)
        out.append(PropertyResult("collapse", f"identity_P{P}_max_rel_err", dev.max() < 1e-10,
                                  dev.max(), "< 1e-10"))
    for P in (4, 8, 16):
        dev = collapse_deviation(P, "relu", seed=100 + P)
        out.append(PropertyResult("collapse", f"relu_P{P}_mean_rel_dev", dev.mean() > 1e-3,
                                  dev.mean(), "> 1e-3, collapse must fail"))
    return out


# ---------------------------------------------------------------------------
# gradients

def _primitive_cases(rng):
    def t(*shape, positive=False):
        a = rng.standard_normal(shape)
        if positive:
            a = np.abs(a) + 0.5
        return dc.Tensor(a)

    def away_from_kink(*shape):
        a = rng.standard_normal(shape)
        a[np.abs(a) < 1e-3] += 0.1
        return dc.Tensor(a)

    w = dc.Tensor(rng.standard_normal((3, 4, 5)))
    w_frame = dc.Tensor(rng.standard_normal((3, 4, 4)))
    w_lstm = dc.Tensor(rng.standard_normal((5, 2, 3)))
    cases = {
        "matmul": lambda: (lambda a, b: dc.tsum(dc.matmul(a, b) * w), [t(3, 4, 3), t(3, 5)]),
        "add_broadcast": lambda: (lambda a, b: dc.tsum(dc.add(a, b) * w), [t(3, 4, 5), t(4, 1)]),
        "mul_broadcast": lambda: (lambda a, b: dc.tsum(dc.mul(a, b) * w), [t(3, 4, 5), t(4, 1)]),
        "sub": lambda: (lambda a, b: dc.tsum(dc.sub(a, b) * w), [t(3, 4, 5), t(3, 4, 5)]),
        "div": lambda: (lambda a, b: dc.tsum(dc.div(a, b) * w), [t(3, 4, 5), t(3, 4, 5, positive=True)]),
        "log": lambda: (lambda a: dc.tsum(dc.log(a) * w), [t(3, 4, 5, positive=True)]),
        "exp": lambda: (lambda a: dc.tsum(dc.exp(a) * w), [t(3, 4, 5)]),
        "sqrt": lambda: (lambda a: dc.tsum(dc.sqrt(a) * w), [t(3, 4, 5, positive=True)]),
        "square": lambda: (lambda a: dc.tsum(dc.square(a) * w), [t(3, 4, 5)]),
        "relu": lambda: (lambda a: dc.tsum(dc.relu(a) * w), [away_from_kink(3, 4, 5)]),
        "sigmoid": lambda: (lambda a: dc.tsum(dc.sigmoid(a) * w), [t(3, 4, 5)]),
        "tanh": lambda: (lambda a: dc.tsum(dc.tanh(a) * w), [t(3, 4, 5)]),
        "prelu": lambda: (lambda a, al: dc.tsum(dc.activation(a, "prelu", al) * w),
                          [away_from_kink(3, 4, 5), dc.Tensor(np.array([0.3]))]),
        "layer_norm": lambda: (lambda a, g, b: dc.tsum(dc.layer_norm(a, g, b) * w),
                               [t(3, 4, 5), t(4, 1), t(4, 1)]),
        "mean": lambda: (lambda a: dc.mean(a * w, axis=1).sum(), [t(3, 4, 5)]),
        "transpose": lambda: (lambda a: dc.tsum(dc.transpose(a, (1, 2, 0)) * dc.transpose(w, (1, 2, 0))),
                              [t(3, 4, 5)]),
        "reshape": lambda: (lambda a: dc.tsum(dc.reshape(a, (12, 5)) * dc.reshape(w, (12, 5))), [t(3, 4, 5)]),
        "slice": lambda: (lambda a: dc.tsum(a[:, 1:3, ::2] * w[:, 1:3, ::2]), [t(3, 4, 5)]),
        "fancy_index": lambda: (lambda a: dc.tsum(a[[0, 2, 2], [1, 1, 3], :]), [t(3, 4, 5)]),
        "concat": lambda: (lambda a, b: dc.tsum(dc.concat([a, b], axis=1) * dc.concat([w, w], axis=1)),
                           [t(3, 4, 5), t(3, 4, 5)]),
        "stack": lambda: (lambda a, b: dc.tsum(dc.stack([a, b], axis=0)[1] * w), [t(3, 4, 5), t(3, 4, 5)]),
        "reverse_time": lambda: (lambda a: dc.tsum(dc.reverse_time(a) * w), [t(3, 4, 5)]),
        "pad_time": lambda: (lambda a: dc.tsum(dc.pad_time(a, 1, 2)[..., 1:6] * w), [t(3, 4, 5)]),
        "frame": lambda: (lambda a: dc.tsum(dc.frame(a, 4, 2) * w_frame),
                          [t(3, 10)]),
        "overlap_add": lambda: (lambda a: dc.tsum(dc.overlap_add(a, 2) * dc.Tensor(np.arange(10.0))),
                                [t(3, 4, 4)]),
        "clip_min": lambda: (lambda a: dc.tsum(dc.clip_min(a, 0.05) * w), [away_from_kink(3, 4, 5)]),
        "lstm": lambda: (lambda x, wi, wh, b: dc.tsum(dc.lstm(x, wi, wh, b) * w_lstm),
                         [t(5, 2, 4), dc.Tensor(0.5 * rng.standard_normal((12, 4))),
                          dc.Tensor(0.5 * rng.standard_normal((12, 3))), t(12)]),
    }
    return cases


def primitive_grad_errors(seed=0):
    rng = np.random.default_rng(seed)
    errors = {}
    for name, make in _primitive_cases(rng).items():
        fn, inputs = make()
        errors[name] = dc.grad_check_many(lambda: fn(*inputs), inputs, eps=1e-5)
    return errors


def tiny_pipeline(kind="shallow", activation="sigmoid", P=None, seed=0):
    """N = H = 8, 2 blocks, hidden 8; the configuration used by the chain check."""
    cfg = ModelConfig(
        FrontendConfig(window=8, stride=4, feature_dim=8, nonlinearity="relu"),
        SeparatorConfig(num_blocks=2, rnn_hidden=8, chunk_size=10),
        HeadConfig(kind=kind, num_sources=2, num_outputs=P, activation=activation, mlp_hidden=6),
    )
    return SeparationModel(cfg, seed=seed, dtype="float64")


def chain_grad_error(kind="shallow", activation="sigmoid", P=None, seed=0, samples=204, max_entries=6):
    """encode -> separator -> head -> decode -> PIT(neg-SNR) gradient check (T ~ 50 frames).

    Many LSTM weight gradients are ~1e-6, so roundoff dominates central
    differences below eps ~ 1e-5; eps = 1e-4 keeps both error terms small.
    """
    model = tiny_pipeline(kind, activation, P, seed)
    rng = np.random.default_rng(seed + 1)
    refs = rng.standard_normal((1, 2, samples))
    mix = refs.sum(axis=1)
    fn = lambda: pit_loss(model.forward(mix), refs, pairwise_neg_snr)[0]
    return dc.grad_check_many(fn, list(model.params.values()), eps=1e-4, floor=1e-6,
                              max_entries=max_entries, rng=np.random.default_rng(seed))


def suite_grad():
    out = [PropertyResult("grad", f"primitive_{k}", v < 1e-5, v, "< 1e-5")
           for k, v in primitive_grad_errors().items()]
    for kind, act, P in (("shallow", "sigmoid", None), ("oversep", "sigmoid", 4), ("deep_mlp", "sigmoid", None)):
        err = chain_grad_error(kind, act, P)
        out.append(PropertyResult("grad", f"chain_{kind}", err < 1e-4, err, "< 1e-4"))
    return out


# ---------------------------------------------------------------------------
# metrics / PIT

def suite_pit(seed=0):
    rng = np.random.default_rng(seed)
    out = []
    scale_dev = 0.0
    for _ in range(20):
        ref, est = rng.standard_normal(500), rng.standard_normal(500)
        est = est + 2 * ref
        base = si_sdr(est, ref)
        for a in (1e-3, 0.5, 7.0, 1e4):
            scale_dev = max(scale_dev, abs(si_sdr(a * est, ref) - base))
    out.append(PropertyResult("pit", "si_sdr_scale_invariance_db", scale_dev < 1e-9, scale_dev, "< 1e-9 dB"))

    perm_dev = 0.0
    for C in (2, 3, 4):
        refs = rng.standard_normal((C, 300))
        ests = refs[::-1] + 0.3 * rng.standard_normal((C, 300))
        with dc.no_grad():
            base = pit_loss(ests, refs)[0].item()
            for p in itertools.permutations(range(C)):
                perm_dev = max(perm_dev, abs(pit_loss(ests[list(p)], refs)[0].item() - base))
    out.append(PropertyResult("pit", "pit_permutation_invariance", perm_dev == 0.0, perm_dev, "== 0 exactly"))

    fir_dev = 0.0
    for _ in range(20):
        ref, est = rng.standard_normal(400), rng.standard_normal(400) + rng.standard_normal(400)
        fir_dev = max(fir_dev, abs(sdr_fir(est, ref, 1) - si_sdr(est, ref, zero_mean=False)))
    out.append(PropertyResult("pit", "sdr_fir1_equals_si_sdr_db", fir_dev < 1e-9, fir_dev, "< 1e-9 dB"))

    hand = max(abs(snr([1.0, 1.0], [1.0, 0.0]) - 0.0),
               abs(si_sdr([1, 1, 0, 0], [1, 0, 0, 0], zero_mean=False) - 0.0))
    out.append(PropertyResult("pit", "hand_values_db", hand < 1e-9, hand, "< 1e-9 dB"))
    return out


# ---------------------------------------------------------------------------
# grouping

def brute_force_grouping(est, refs, loss_fn=neg_snr_numpy):
    """Recursive enumeration, independent of the itertools path in dynamic_grouping."""
    P, C = len(est), len(refs)
    best = [None, np.inf]

    def rec(prefix, sums):
        if len(prefix) == P:
            loss = loss_fn(sums, refs)
            if loss < best[1]:
                best[:] = [tuple(prefix), loss]
            return
        p = len(prefix)
        for k in range(C):
            nxt = sums.copy()
            nxt[k] = nxt[k] + est[p]
            rec(prefix + [k], nxt)

    rec([], np.zeros((C,) + np.shape(est)[1:]))
    return best[0], best[1]


def suite_grouping(instances=50, seed=0):
    rng = np.random.default_rng(seed)
    mismatches, worst_gap = 0, -np.inf
    for i in range(instances):
        P = int(rng.integers(2, 7))
        refs = rng.standard_normal((2, 64))
        owner = rng.integers(0, 2, size=P)
        est = np.array([refs[o] / P * 2 + 0.3 * rng.standard_normal(64) for o in owner])
        scheme, loss = dynamic_grouping(est, refs)
        bf_assign, bf_loss = brute_force_grouping(est, refs)
        if scheme.assignment != bf_assign or loss != bf_loss:
            mismatches += 1
        if P % 2:
            continue                    # contiguous blocks need C | P
        det = deterministic_grouping(P, 2)
        det_sum = np.zeros_like(refs)
        for p, k in enumerate(det.assignment):
            det_sum[k] += est[p]
        worst_gap = max(worst_gap, loss - neg_snr_numpy(det_sum, refs))
    return [
        PropertyResult("grouping", "dynamic_matches_brute_force", mismatches == 0, mismatches, "0 mismatches"),
        PropertyResult("grouping", "dynamic_le_deterministic", worst_gap <= 0, worst_gap, "max(dyn - det) <= 0"),
    ]


# ---------------------------------------------------------------------------
# complexity

def full_model_config(kind="shallow", P=None, activation="relu", mlp_hidden=64, num_blocks=6):
    return ModelConfig(
        FrontendConfig(window=16, stride=8, feature_dim=64),
        SeparatorConfig(num_blocks=num_blocks, rnn_hidden=128, chunk_size=100),
        HeadConfig(kind=kind, num_sources=2, num_outputs=P, activation=activation, mlp_hidden=mlp_hidden),
    )


def suite_complexity():
    out = []
    worst = 0
    for cfg in (full_model_config(), full_model_config("oversep", 16), full_model_config("deep_mlp"),
                tiny_pipeline().config):
        model = SeparationModel(cfg, dtype="float32")
        worst = max(worst, abs(count_params(model) - closed_form_params(cfg)))
    out.append(PropertyResult("complexity", "params_closed_form_exact", worst == 0, worst, "== 0"))
    base = full_model_config()
    params = closed_form_params(base)
    macs = count_macs(base, 4.0)
    out.append(PropertyResult("complexity", "full_params_vs_2.6M", abs(params / REFERENCE_PARAMS - 1) <= 0.2,
                              params, "within 20% of 2.6M", informational=True))
    out.append(PropertyResult("complexity", "full_macs_vs_21.5G", abs(macs / REFERENCE_MACS - 1) <= 0.2,
                              macs, "within 20% of 21.5G", informational=True))
    return out


RUNNERS = {
    "collapse": suite_collapse,
    "grad": suite_grad,
    "pit": suite_pit,
    "grouping": suite_grouping,
    "complexity": suite_complexity,
}


def run_suites(name="all", echo=print):
    names = SUITES if name == "all" else (name,)
    results = []
    for n in names:
        t0 = time.time()
        res = RUNNERS[n]()
        for r in res:
            echo(r.line())
        echo(f"-- {n}: {time.time() - t0:.1f}s")
        results.extend(res)
    return results
