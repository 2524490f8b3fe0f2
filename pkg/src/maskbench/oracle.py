"""Reference separators used as sanity bounds: ideal ratio masks and pass-through."""
import numpy as np

from .objective import MetricConfig, improvement, pit_align, si_sdr


def _stft(x, window, hop):
    win = np.sqrt(np.hanning(window + 1)[:-1])
    pad = window
    x = np.pad(x, (pad, pad + (-(x.size + 2 * pad - window)) % hop))
    count = (x.size - window) // hop + 1
    idx = np.arange(window)[None, :] + hop * np.arange(count)[:, None]
    return np.fft.rfft(x[idx] * win, axis=1), x.size, pad


def _istft(spec, window, hop, total, pad, length):
    win = np.sqrt(np.hanning(window + 1)[:-1])
    frames = np.fft.irfft(spec, window, axis=1) * win
    out = np.zeros(total)
    norm = np.zeros(total)
    for t, fr in enumerate(frames):
        out[t * hop:t * hop + window] += fr
        norm[t * hop:t * hop + window] += win * win
    out /= np.maximum(norm, 1e-8)
    return out[pad:pad + length]


def ideal_ratio_mask(mixture, sources, window=256, hop=128):
    """Separate with magnitude ratio masks computed from the true sources.

    Masks are |S_k| / sum_j |S_j| in a sqrt-Hann STFT domain and are applied
    to the mixture spectrum.
    """
    mixture = np.asarray(mixture, dtype=np.float64)
    specs = [_stft(np.asarray(s, dtype=np.float64), window, hop)[0] for s in sources]
    mix_spec, total, pad = _stft(mixture, window, hop)
    mags = np.abs(np.array(specs))
    denom = np.maximum(mags.sum(axis=0), 1e-12)
    return np.array([_istft(mix_spec * (m / denom), window, hop, total, pad, mixture.size)
                     for m in mags])


def identity_separator(mixture, num_sources):
    """Every output is the unprocessed mixture (zero-improvement baseline)."""
    return np.repeat(np.asarray(mixture, dtype=np.float64)[None], num_sources, axis=0)


def oracle_sisdri(mixtures, sources, config=None):
    """Mean SI-SDRi of the ideal ratio mask over a set of utterances."""
    config = config or MetricConfig()
    vals = []
    for mix, srcs in zip(mixtures, sources):
        ests = ideal_ratio_mask(mix, srcs)
        perm = pit_align(ests, srcs, lambda e, r: si_sdr(e, r, config.zero_mean, config.clamp_db))
        vals.extend(improvement("si_sdr", ests[perm[k]], srcs[k], mix, config) for k in range(len(srcs)))
    return float(np.mean(vals))
