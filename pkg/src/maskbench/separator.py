"""Dual-path recurrent separator.

The feature sequence is cut into overlapping chunks; each block runs a
bidirectional LSTM within every chunk and then across chunks, each pass
followed by a linear projection, layer norm and a residual connection.
"""
import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError


@dataclass
class SeparatorConfig:
    num_blocks: int = 6
    rnn_hidden: int = 128
    feature_dim: int = None
    chunk_size: int = 100
    chunk_hop: int = None

    def __post_init__(self):
        if self.num_blocks < 1 or self.rnn_hidden < 1:
            raise ConfigError("num_blocks and rnn_hidden must be positive")
        if self.feature_dim is not None and self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if self.chunk_size is not None:
            self.validate_chunking(self.chunk_size, self.hop_for(self.chunk_size))

    def hop_for(self, chunk_size):
        return self.chunk_hop if self.chunk_hop is not None else max(1, chunk_size // 2)

    @staticmethod
    def validate_chunking(size, hop):
        if size < 2:
            raise ConfigError(f"chunk size must be >= 2, got {size}")
        if not 1 <= hop <= size:
            raise ConfigError(f"chunk hop must lie in [1, {size}], got {hop}")

    def chunking(self, num_frames):
        """(chunk size, hop) for a sequence of ``num_frames``; ``chunk_size=None`` picks ~sqrt(2T)."""
        size = self.chunk_size if self.chunk_size is not None else auto_chunk_size(num_frames)
        return size, self.hop_for(size)


def auto_chunk_size(num_frames):
    size = int(round(math.sqrt(2 * num_frames) / 2.0)) * 2
    return max(2, size)


@dataclass
class ChunkedFeature:
    data: dc.Tensor          # (..., H, K, S)
    original_T: int
    pad: int
    hop: int

    @property
    def num_chunks(self):
        return self.data.shape[-1]

    @property
    def chunk_size(self):
        return self.data.shape[-2]


def chunk_layout(T, size, hop):
    """(number of chunks, tail pad) that tile T frames."""
    SeparatorConfig.validate_chunking(size, hop)
    if T <= size:
        padded = size
    else:
        padded = size + math.ceil((T - size) / hop) * hop
    return (padded - size) // hop + 1, padded - T


def segment(feat, size, hop):
    """(..., H, T) -> ChunkedFeature with data (..., H, size, S)."""
    T = feat.shape[-1]
    _, pad = chunk_layout(T, size, hop)
    x = dc.pad_time(feat, 0, pad) if pad else feat
    return ChunkedFeature(dc.frame(x, size, hop), T, pad, hop)


def coverage(T_padded, size, hop):
    """How many chunks cover each padded frame."""
    count = (T_padded - size) // hop + 1
    cov = np.zeros(T_padded)
    for s in range(count):
        cov[s * hop:s * hop + size] += 1
    return cov


def overlap_add_chunks(chunks):
    """Exact left inverse of :func:`segment`: overlap-add, divide by coverage, trim."""
    out = dc.overlap_add(chunks.data, chunks.hop)
    cov = coverage(out.shape[-1], chunks.chunk_size, chunks.hop).astype(out.dtype)
    out = out / cov
    if chunks.pad:
        out = out[..., :chunks.original_T]
    return out


# ---------------------------------------------------------------------------
# parameters

def _uniform(rng, k, shape, dtype):
    return dc.Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)


def init_lstm_params(rng, input_dim, hidden, dtype=np.float64):
    k = 1.0 / math.sqrt(hidden)
    return {
        "w_ih": _uniform(rng, k, (4 * hidden, input_dim), dtype),
        "w_hh": _uniform(rng, k, (4 * hidden, hidden), dtype),
        "b": _uniform(rng, k, (4 * hidden,), dtype),
    }


def init_separator_params(config, input_dim, rng, dtype=np.float64):
    """Flat, ordered name -> Tensor mapping for the whole separator."""
    H = config.feature_dim or input_dim
    h = config.rnn_hidden
    params = {
        "separator.in_norm.gain": dc.Tensor(np.ones((input_dim, 1), dtype), requires_grad=True),
        "separator.in_norm.bias": dc.Tensor(np.zeros((input_dim, 1), dtype), requires_grad=True),
        "separator.in_proj.weight": _uniform(rng, 1 / math.sqrt(input_dim), (H, input_dim), dtype),
        "separator.in_proj.bias": _uniform(rng, 1 / math.sqrt(input_dim), (H, 1), dtype),
    }
    for i in range(config.num_blocks):
        for path in ("intra", "inter"):
            pre = f"separator.blocks.{i}.{path}"
            for direction in ("fwd", "bwd"):
                for name, t in init_lstm_params(rng, H, h, dtype).items():
                    params[f"{pre}.lstm_{direction}.{name}"] = t
            k = 1 / math.sqrt(2 * h)
            params[f"{pre}.proj.weight"] = _uniform(rng, k, (H, 2 * h), dtype)
            params[f"{pre}.proj.bias"] = _uniform(rng, k, (H,), dtype)
            params[f"{pre}.norm.gain"] = dc.Tensor(np.ones(H, dtype), requires_grad=True)
            params[f"{pre}.norm.bias"] = dc.Tensor(np.zeros(H, dtype), requires_grad=True)
    return params


def separator_param_count(config, input_dim):
    H = config.feature_dim or input_dim
    h = config.rnn_hidden
    lstm = 4 * h * H + 4 * h * h + 4 * h
    path = 2 * lstm + H * 2 * h + H + 2 * H
    return 2 * input_dim + H * input_dim + H + config.num_blocks * 2 * path


# ---------------------------------------------------------------------------
# forward

def recurrent_layer(x, fwd, bwd=None):
    """LSTM over a time-major (T, B, D) sequence.

    Passing ``bwd`` parameters makes the layer bidirectional: the reverse
    pass runs on the time-flipped sequence and its output (flipped back) is
    concatenated, giving 2 * hidden features.
    """
    out = dc.lstm(x, fwd["w_ih"], fwd["w_hh"], fwd["b"])
    if bwd is None:
        return out
    rev = dc.reverse_time(dc.lstm(dc.reverse_time(x, axis=0), bwd["w_ih"], bwd["w_hh"], bwd["b"]), axis=0)
    return dc.concat([out, rev], axis=-1)


def _sub(params, prefix):
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


# (..., H, K, S) -> time-major order for each pass, and back
_TO_SEQ = {"intra": (2, 0, 3, 1), "inter": (3, 0, 2, 1)}


def _path(x, p, order):
    B, H, K, S = x.shape
    seq = dc.transpose(x, order)
    L0, _, M, _ = seq.shape
    y = recurrent_layer(dc.reshape(seq, (L0, B * M, H)), _sub(p, "lstm_fwd"), _sub(p, "lstm_bwd"))
    y = dc.matmul(y, dc.transpose(p["proj.weight"])) + p["proj.bias"]
    y = dc.layer_norm(y, p["norm.gain"], p["norm.bias"], axis=-1)
    y = dc.transpose(dc.reshape(y, (L0, B, M, H)), tuple(np.argsort(order)))
    return x + y


def dprnn_block(chunks, params):
    """One intra-chunk + inter-chunk pass; ``params`` holds this block's tensors."""
    x = chunks.data
    squeeze = x.ndim == 3
    if squeeze:
        x = dc.reshape(x, (1,) + x.shape)
    x = _path(x, _sub(params, "intra"), _TO_SEQ["intra"])
    x = _path(x, _sub(params, "inter"), _TO_SEQ["inter"])
    if squeeze:
        x = dc.reshape(x, x.shape[1:])
    return ChunkedFeature(x, chunks.original_T, chunks.pad, chunks.hop)


def separator_forward(latent, config, params):
    """Latent (..., N, T) -> separator feature (..., H, T)."""
    x = dc.layer_norm(latent, params["separator.in_norm.gain"], params["separator.in_norm.bias"])
    x = dc.matmul(params["separator.in_proj.weight"], x) + params["separator.in_proj.bias"]
    size, hop = config.chunking(x.shape[-1])
    chunks = segment(x, size, hop)
    for i in range(config.num_blocks):
        chunks = dprnn_block(chunks, _sub(params, f"separator.blocks.{i}"))
    return overlap_add_chunks(chunks)
