import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from maskbench import diffcore as dc
from maskbench.errors import InputError, ResourceError
from maskbench.objective import (
    MetricConfig, improvement, neg_snr_loss, pairwise_neg_snr, pit_align, pit_loss, sdr_fir,
    si_sdr, snr,
)


def test_snr_examples():
    x = np.random.default_rng(0).standard_normal(50)
    assert snr(x, x) == 50.0
    assert abs(snr([1.0, 1.0], [1.0, 0.0])) < 1e-12
    assert abs(snr(-x, x) - 10 * math.log10(1 / 4)) < 1e-12
    with pytest.raises(InputError):
        snr([1.0, 2.0], [0.0, 0.0])
    assert snr(x, x, clamp_db=30.0) == 30.0


def test_snr_matches_definition():
    rng = np.random.default_rng(1)
    ref, est = rng.standard_normal(200), rng.standard_normal(200)
    expected = 10 * np.log10(np.sum(ref ** 2) / np.sum((ref - est) ** 2))
    assert abs(snr(est, ref) - expected) < 1e-12


def test_si_sdr_examples():
    assert abs(si_sdr([1.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], zero_mean=False)) < 1e-12
    ref = np.random.default_rng(2).standard_normal(80)
    assert si_sdr(3 * ref, ref) == 50.0
    with pytest.raises(InputError):
        si_sdr(ref, np.ones(80))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 10**6))
def test_si_sdr_scale_invariance(a, seed):
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(128)
    est = ref + rng.standard_normal(128)
    assert abs(si_sdr(a * est, ref) - si_sdr(est, ref)) < 1e-9


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-6, 1e6))
def test_metrics_are_total_and_clamped(seed, scale):
    rng = np.random.default_rng(seed)
    ref, est = rng.standard_normal(64), scale * rng.standard_normal(64)
    for v in (snr(est, ref), si_sdr(est, ref), sdr_fir(est, ref, 8)):
        assert math.isfinite(v) and -50.0 <= v <= 50.0


def test_improvement():
    rng = np.random.default_rng(3)
    ref, noise = rng.standard_normal(300), rng.standard_normal(300)
    mix = ref + noise
    for metric in ("snr", "si_sdr", "sdr"):
        assert improvement(metric, mix, ref, mix) == 0.0
    assert improvement("si_sdr", ref + 0.1 * noise, ref, mix) > 0


def test_sdr_fir_examples():
    rng = np.random.default_rng(4)
    ref = rng.standard_normal(400)
    for _ in range(5):
        est = rng.standard_normal(400) + ref
        assert abs(sdr_fir(est, ref, 1) - si_sdr(est, ref, zero_mean=False)) < 1e-9
    ref[-8:] = 0.0                      # delay by 5 then loses nothing at the tail
    delayed = np.concatenate([np.zeros(5), ref[:-5]])
    assert sdr_fir(delayed, ref, 16) == 50.0
    with pytest.raises(InputError):
        sdr_fir(ref[:10], ref[:10], 10)


def test_sdr_fir_matches_dense_least_squares():
    rng = np.random.default_rng(5)
    n, F = 300, 12
    ref = rng.standard_normal(n)
    est = np.convolve(ref, rng.standard_normal(4))[:n] + 0.5 * rng.standard_normal(n)
    # dense design matrix of delayed copies over the extended support
    A = np.zeros((n + F - 1, F))
    for d in range(F):
        A[d:d + n, d] = ref
    y = np.concatenate([est, np.zeros(F - 1)])
    taps = np.linalg.lstsq(A, y, rcond=None)[0]
    proj = A @ taps
    expected = 10 * np.log10(proj @ proj / ((y - proj) @ (y - proj)))
    assert abs(sdr_fir(est, ref, F) - expected) < 1e-8


def test_neg_snr_loss_examples_and_gradient():
    rng = np.random.default_rng(6)
    refs = rng.standard_normal((2, 60))
    assert neg_snr_loss(refs.copy(), refs).item() == -50.0
    losses = []
    for t in np.linspace(-1, 0.99, 25):
        est = refs.copy()
        est[0] = t * refs[0]
        losses.append(neg_snr_loss(est, refs).item())
    assert all(b < a for a, b in zip(losses, losses[1:]))
    est = dc.Tensor(rng.standard_normal((2, 60)))
    assert dc.grad_check_many(lambda: neg_snr_loss(est, refs), [est]) < 1e-6


def test_tensor_snr_agrees_with_numpy():
    rng = np.random.default_rng(7)
    refs, ests = rng.standard_normal((3, 50)), rng.standard_normal((3, 50))
    expected = -np.mean([snr(e, r) for e, r in zip(ests, refs)])
    assert abs(neg_snr_loss(ests, refs).item() - expected) < 1e-12


def test_pit_swap_example():
    rng = np.random.default_rng(8)
    refs = rng.standard_normal((2, 40))
    loss, perm = pit_loss(refs[::-1].copy(), refs)
    assert perm == (1, 0) and loss.item() == -50.0


@pytest.mark.parametrize("C", [2, 3, 4])
def test_pit_invariance_and_brute_force(C):
    rng = np.random.default_rng(C)
    refs = rng.standard_normal((C, 70))
    ests = refs[rng.permutation(C)] + 0.5 * rng.standard_normal((C, 70))
    base, perm = pit_loss(ests, refs)
    for p in itertools.permutations(range(C)):
        assert pit_loss(ests[list(p)], refs)[0].item() == base.item()
    # independent search: score every assignment with the numpy metric
    scores = {}
    for p in itertools.permutations(range(C)):
        scores[p] = -np.mean([snr(ests[p[k]], refs[k]) for k in range(C)])
    best = min(scores, key=lambda p: (scores[p], p))
    assert perm == best and abs(base.item() - scores[best]) < 1e-10


def test_pit_batched_and_gradient():
    rng = np.random.default_rng(9)
    refs = rng.standard_normal((3, 2, 30))
    ests = dc.Tensor(refs[:, ::-1] + 0.3 * rng.standard_normal((3, 2, 30)))
    loss, perms = pit_loss(ests, refs)
    assert perms == [(1, 0)] * 3
    assert dc.grad_check_many(lambda: pit_loss(ests, refs)[0], [ests]) < 1e-6
    assert pairwise_neg_snr(ests, refs).shape == (3, 2, 2)


def test_pit_ties_and_limits():
    refs = np.ones((1, 3, 10))
    ests = np.ones((1, 3, 10))
    assert pit_loss(ests, refs)[1] == [(0, 1, 2)]
    with pytest.raises(ResourceError):
        pit_loss(np.zeros((7, 10)), np.ones((7, 10)))


def test_pit_align_maximizes_metric():
    rng = np.random.default_rng(10)
    refs = rng.standard_normal((3, 100))
    ests = refs[[2, 0, 1]] + 0.1 * rng.standard_normal((3, 100))
    perm = pit_align(ests, refs)
    assert [perm[k] for k in range(3)] == [1, 2, 0]


def test_metric_config_validation():
    with pytest.raises(InputError):
        MetricConfig(clamp_db=0)
