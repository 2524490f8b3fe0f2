"""Training losses and evaluation metrics.

Numpy metrics (``snr``, ``si_sdr``, ``sdr_fir``) work on 1-D float64 arrays
and return dB clamped to +/- ``clamp_db``.  The tensor losses mirror ``snr``
on the differentiable tape.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import InputError, NumericError, ResourceError
from .frontend import Waveform

LOG10_SCALE = 10.0 / math.log(10.0)
MAX_PIT_SOURCES = 6


@dataclass
class MetricConfig:
    clamp_db: float = 50.0
    zero_mean: bool = True
    sdr_filter_len: int = 64

    def __post_init__(self):
        if self.clamp_db <= 0:
            raise InputError("clamp_db must be positive")
        if self.sdr_filter_len < 1:
            raise InputError("sdr_filter_len must be >= 1")


def _vec(x):
    if isinstance(x, Waveform):
        x = x.samples
    return np.asarray(x, dtype=np.float64).reshape(-1)


def _pair(est, ref):
    est, ref = _vec(est), _vec(ref)
    if est.shape != ref.shape:
        raise InputError(f"length mismatch: estimate {est.size} vs reference {ref.size}")
    return est, ref


def _ratio_db(signal_energy, noise_energy, clamp_db):
    eps = 10.0 ** (-clamp_db / 10.0)
    if signal_energy <= 0:
        return -clamp_db
    val = 10.0 * math.log10(signal_energy / max(noise_energy, eps * signal_energy))
    return float(min(max(val, -clamp_db), clamp_db))


def snr(est, ref, clamp_db=50.0):
    """10 log10(|ref|^2 / max(|ref - est|^2, eps |ref|^2)) in dB."""
    est, ref = _pair(est, ref)
    energy = float(ref @ ref)
    if energy == 0:
        raise InputError("snr reference is all zeros")
    err = ref - est
    return _ratio_db(energy, float(err @ err), clamp_db)


def si_sdr(est, ref, zero_mean=True, clamp_db=50.0):
    """Scale-invariant SDR: energy of the optimal scaling of ``ref`` over the residual."""
    est, ref = _pair(est, ref)
    if zero_mean:
        est = est - est.mean()
        ref = ref - ref.mean()
    energy = float(ref @ ref)
    if energy == 0:
        raise InputError("si_sdr reference is constant" if zero_mean else "si_sdr reference is all zeros")
    target = (float(est @ ref) / energy) * ref
    res = est - target
    return _ratio_db(float(target @ target), float(res @ res), clamp_db)


def _autocorr(x, maxlag):
    n = x.size
    size = 1 << int(math.ceil(math.log2(n + maxlag)))
    spec = np.fft.rfft(x, size)
    return np.fft.irfft(spec * np.conj(spec), size)[:maxlag]


def _xcorr(est, ref, maxlag):
    """b[d] = sum_t est[t] ref[t - d] for d = 0 .. maxlag-1."""
    n = ref.size
    size = 1 << int(math.ceil(math.log2(n + maxlag)))
    full = np.fft.irfft(np.fft.rfft(est, size) * np.conj(np.fft.rfft(ref, size)), size)
    return full[:maxlag]


def fir_projection(est, ref, filter_len):
    """Least-squares FIR filter mapping delayed copies of ``ref`` onto ``est``.

    Works on the zero-extended support of length ``len + filter_len - 1`` so
    the Gram matrix is exactly Toeplitz (the reference autocorrelation).
    The plain normal equations are tried first; a ridge of 1e-8 * trace is
    added only if they are numerically singular.  Returns (taps, projection).
    """
    n, F = ref.size, filter_len
    r = _autocorr(ref, F)
    idx = np.arange(F)
    gram = r[np.abs(idx[:, None] - idx[None, :])]
    b = _xcorr(est, ref, F)
    try:
        chol = np.linalg.cholesky(gram)
        if np.min(np.abs(np.diag(chol))) ** 2 < 1e-12 * np.max(np.diag(gram)):
            raise np.linalg.LinAlgError("ill-conditioned")
        taps = np.linalg.solve(gram, b)
    except np.linalg.LinAlgError:
        ridge = gram + 1e-8 * np.trace(gram) * np.eye(F)
        try:
            taps = np.linalg.solve(ridge, b)
        except np.linalg.LinAlgError as exc:
            raise NumericError(f"FIR projection system is singular: {exc}") from None
    if not np.all(np.isfinite(taps)):
        raise NumericError("FIR projection produced non-finite taps")
    proj = np.convolve(ref, taps)
    return taps, proj


def sdr_fir(est, ref, filter_len=64, clamp_db=50.0):
    """SDR after projecting ``est`` onto a ``filter_len``-tap filtering of ``ref``."""
    est, ref = _pair(est, ref)
    if filter_len < 1 or ref.size <= filter_len:
        raise InputError(f"need 1 <= filter_len < len(ref), got {filter_len} for {ref.size} samples")
    if not np.any(ref):
        raise InputError("sdr reference is all zeros")
    _, proj = fir_projection(est, ref, filter_len)
    est_ext = np.concatenate([est, np.zeros(filter_len - 1)])
    res = est_ext - proj
    return _ratio_db(float(proj @ proj), float(res @ res), clamp_db)


METRICS = {
    "snr": lambda est, ref, cfg: snr(est, ref, cfg.clamp_db),
    "si_sdr": lambda est, ref, cfg: si_sdr(est, ref, cfg.zero_mean, cfg.clamp_db),
    "sdr": lambda est, ref, cfg: sdr_fir(est, ref, cfg.sdr_filter_len, cfg.clamp_db),
}


def improvement(metric, est, ref, mixture, config=None):
    """metric(est, ref) - metric(mixture, ref); ``metric`` is a name or a callable."""
    config = config or MetricConfig()
    fn = METRICS[metric] if isinstance(metric, str) else (lambda e, r, c: metric(e, r))
    return fn(est, ref, config) - fn(mixture, ref, config)


def neg_snr_numpy(ests, refs, clamp_db=50.0):
    """Mean negative SNR over sources (numpy, no tape)."""
    return -float(np.mean([snr(e, r, clamp_db) for e, r in zip(ests, refs)]))


# ---------------------------------------------------------------------------
# differentiable losses

def snr_tensor(est, ref, clamp_db=50.0):
    """Differentiable SNR over the last axis with numpy broadcasting; ``ref`` is constant."""
    ref = np.asarray(ref.data if isinstance(ref, dc.Tensor) else ref)
    ref = ref.astype(est.dtype, copy=False)
    energy = np.sum(ref * ref, axis=-1)
    if np.any(energy == 0):
        raise InputError("snr reference is all zeros")
    eps = 10.0 ** (-clamp_db / 10.0)
    err = dc.sub(dc.Tensor(ref), est)
    floor = eps * energy
    noise = dc.clip_min(dc.tsum(dc.square(err), axis=-1), floor)
    val = (LOG10_SCALE * np.log(energy)) - LOG10_SCALE * dc.log(noise)
    # log rounding can leave the floored value a hair under clamp_db; pin it exactly
    at_floor = (noise.data <= floor).astype(val.dtype)
    val = val * (1.0 - at_floor) + clamp_db * at_floor
    return dc.clip_min(val, -clamp_db)


def neg_snr_loss(ests, refs, clamp_db=50.0):
    """Mean over sources (and batch) of -SNR."""
    ests = dc.as_tensor(ests)
    refs = np.asarray(refs)
    if ests.shape != refs.shape:
        raise InputError(f"estimate shape {ests.shape} does not match references {refs.shape}")
    return dc.mean(dc.neg(snr_tensor(ests, refs, clamp_db)))


def pairwise_neg_snr(ests, refs, clamp_db=50.0):
    """(B, C, L) x (B, C, L) -> (B, C_est, C_ref) matrix of -SNR."""
    B, C, L = ests.shape
    e = dc.reshape(ests, (B, C, 1, L))
    r = np.asarray(refs).reshape(B, 1, C, L)
    return dc.neg(snr_tensor(e, r, clamp_db))


def _check_pit(C):
    if C > MAX_PIT_SOURCES:
        raise ResourceError(f"PIT enumerates C! permutations; C={C} exceeds {MAX_PIT_SOURCES}")


def best_permutations(pair_loss):
    """Per batch row, the permutation minimising mean pair loss.

    ``pair_loss[b, i, k]`` is the loss of estimate i against reference k;
    ``perm[k]`` is the estimate assigned to reference k.  Ties go to the
    lexicographically smallest permutation.
    """
    B, C, _ = pair_loss.shape
    _check_pit(C)
    perms = list(itertools.permutations(range(C)))
    cols = np.arange(C)
    totals = np.stack([pair_loss[:, list(p), cols].mean(axis=1) for p in perms], axis=1)
    choice = np.argmin(totals, axis=1)
    return [perms[i] for i in choice]


def pit_loss(ests, refs, loss_fn=pairwise_neg_snr):
    """Permutation-invariant loss.

    ``ests``/``refs`` are (C, L) or (B, C, L).  ``loss_fn(ests, refs)`` must
    return the (B, C_est, C_ref) pair-loss tensor.  Returns the mean loss of
    the best permutation per utterance and the list of permutations.
    """
    ests = dc.as_tensor(ests)
    refs = np.asarray(refs)
    single = ests.ndim == 2
    if single:
        ests = dc.reshape(ests, (1,) + ests.shape)
        refs = refs[None]
    if ests.shape != refs.shape:
        raise InputError(f"estimate shape {ests.shape} does not match references {refs.shape}")
    _check_pit(ests.shape[1])
    pair = loss_fn(ests, refs)
    perms = best_permutations(pair.data)
    B, C = ests.shape[:2]
    rows = np.repeat(np.arange(B), C)
    est_idx = np.array([p[k] for p in perms for k in range(C)])
    ref_idx = np.tile(np.arange(C), B)
    loss = dc.mean(pair[rows, est_idx, ref_idx])
    return loss, (perms[0] if single else perms)


def pit_align(ests, refs, metric=si_sdr):
    """Numpy PIT for evaluation: permutation maximising mean ``metric``."""
    ests, refs = np.asarray(ests), np.asarray(refs)
    C = refs.shape[0]
    _check_pit(C)
    score = np.array([[metric(ests[i], refs[k]) for k in range(C)] for i in range(C)])
    return best_permutations(-score[None])[0]
