"""Learnable analysis/synthesis filterbank and mask application.

The encoder slices the waveform into overlapping frames (one per column) and
maps each through an N x L matrix; the decoder maps masked columns back to L
samples and overlap-adds them at the encoder stride.
"""
import wave
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import InputError


@dataclass
class FrontendConfig:
    window: int = 16
    stride: int = None
    feature_dim: int = 64
    sample_rate: int = 8000
    nonlinearity: str = "relu"

    def __post_init__(self):
        if self.stride is None:
            self.stride = max(1, self.window // 2)
        if self.window < 1 or self.feature_dim < 1 or self.sample_rate <= 0:
            raise ValueError("window, feature_dim and sample_rate must be positive")
        if not 1 <= self.stride <= self.window:
            raise ValueError(f"stride must lie in [1, window], got {self.stride}")
        if self.nonlinearity not in ("relu", "identity"):
            raise ValueError(f"encoder nonlinearity must be relu or identity, got {self.nonlinearity!r}")

    @classmethod
    def from_ms(cls, window_ms=2.0, sample_rate=8000, **kw):
        return cls(window=int(round(window_ms * 1e-3 * sample_rate)), sample_rate=sample_rate, **kw)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 8000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("Waveform holds a 1-D buffer")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.samples.size / self.sample_rate


def padded_length(n, window, stride):
    if n < window:
        raise InputError(f"input of {n} samples is shorter than the {window}-sample window")
    rem = (n - window) % stride
    return n + (stride - rem if rem else 0)


def num_frames(n, window, stride):
    return (padded_length(n, window, stride) - window) // stride + 1


def init_frontend_params(config, rng, dtype=np.float64):
    L, N = config.window, config.feature_dim
    k = 1.0 / np.sqrt(L)
    return {
        "encoder.weight": dc.Tensor(rng.uniform(-k, k, size=(N, L)).astype(dtype), requires_grad=True),
        "decoder.weight": dc.Tensor(rng.uniform(-k, k, size=(L, N)).astype(dtype), requires_grad=True),
    }


def _as_signal(wave_in):
    if isinstance(wave_in, Waveform):
        return dc.Tensor(wave_in.samples)
    return dc.as_tensor(wave_in)


def encode(wave_in, weight, config, linear=False):
    """Waveform(s) (..., samples) -> latent representation (..., N, T).

    With ``linear=True`` the encoder nonlinearity is skipped.
    """
    x = _as_signal(wave_in)
    n = x.shape[-1]
    total = padded_length(n, config.window, config.stride)
    if total > n:
        x = dc.pad_time(x, 0, total - n)
    frames = dc.frame(x, config.window, config.stride)
    latent = dc.matmul(weight, frames)
    if linear or config.nonlinearity == "identity":
        return latent
    return dc.relu(latent)


def apply_mask(latent, mask):
    """Hadamard product of latent (..., N, T) with a mask of a compatible shape."""
    latent, mask = dc.as_tensor(latent), dc.as_tensor(mask)
    if latent.shape[-2:] != mask.shape[-2:]:
        raise dc.DimensionError(f"mask shape {mask.shape} does not match latent {latent.shape}")
    return dc.mul(latent, mask)


def decode(latent, weight, config, length=None):
    """Latent (..., N, T) -> waveform (..., samples) by overlap-add synthesis.

    The output covers the padded input length; pass ``length`` to trim the
    tail padding back to the original number of samples.
    """
    frames = dc.matmul(weight, latent)
    out = dc.overlap_add(frames, config.stride)
    if length is not None:
        if length > out.shape[-1]:
            raise dc.DimensionError(f"cannot trim {out.shape[-1]} samples to {length}")
        if length < out.shape[-1]:
            out = out[..., :length]
    return out


# ---------------------------------------------------------------------------
# WAV I/O (mono, 16-bit PCM)

def quantize(samples):
    """Round to the 16-bit grid used on disk; returns int16."""
    q = np.round(np.asarray(samples, dtype=np.float64) * 32768.0)
    return np.clip(q, -32768, 32767).astype(np.int16)


def write_wav(path, samples, sample_rate=8000):
    if isinstance(samples, Waveform):
        samples, sample_rate = samples.samples, samples.sample_rate
    data = quantize(samples)
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(sample_rate))
        fh.writeframes(data.astype("<i2").tobytes())


def read_wav(path):
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
            raise ValueError(f"{path}: expected mono 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)
