"""Parameter and multiply-accumulate counts.

One MAC is one multiply-accumulate.  Matrix products in the encoder,
separator (input projection, LSTM gates at every time step, path
projections), mask head and decoder are counted; activations, norms, mask
products and overlap-add sums are not.
"""
from ..frontend import num_frames
from ..maskheads import head_param_count
from ..separator import chunk_layout, separator_param_count


def count_params(model):
    """Total learnable elements of an instantiated model."""
    return int(sum(p.size for p in model.parameters().values()))


def frontend_param_count(fe):
    return 2 * fe.feature_dim * fe.window


def closed_form_params(config):
    return (frontend_param_count(config.frontend)
            + separator_param_count(config.separator, config.latent_dim)
            + head_param_count(config.head, config.feature_dim, config.latent_dim))


def mac_breakdown(config, input_seconds=4.0):
    fe, sep, head = config.frontend, config.separator, config.head
    samples = int(round(input_seconds * fe.sample_rate))
    T = num_frames(samples, fe.window, fe.stride)
    N, L, H, h = fe.feature_dim, fe.window, config.feature_dim, sep.rnn_hidden
    size, hop = sep.chunking(T)
    chunks, _ = chunk_layout(T, size, hop)
    steps = size * chunks
    per_path = steps * (2 * 4 * h * (H + h) + 2 * h * H)
    if head.kind == "deep_mlp":
        D = head.mlp_hidden
        head_macs = head.num_sources * (D * H + D * D + N * D) * T
    else:
        head_macs = head.num_outputs * N * H * T
    return {
        "encoder": N * L * T,
        "separator": H * N * T + sep.num_blocks * 2 * per_path,
        "head": head_macs,
        "decoder": head.num_sources * L * N * T,
    }


def count_macs(config, input_seconds=4.0):
    """Symbolic MAC count for one utterance of ``input_seconds``."""
    if hasattr(config, "config"):
        config = config.config
    return int(sum(mac_breakdown(config, input_seconds).values()))
