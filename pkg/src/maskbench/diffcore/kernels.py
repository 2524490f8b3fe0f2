"""Hot inner loops: the LSTM recurrence, forward and backward.

Each kernel has a numba ``@njit`` version and a pure-numpy version with the
same signature.  ``MASKBENCH_NUMBA`` selects the path: ``1`` forces numba,
``0`` forces numpy, and the default ``auto`` uses numba only for narrow
batches, where per-step interpreter overhead dominates the numpy loop (see
``benchmarks/bench_lstm.py``).  Without numba installed the numpy path is
always used.
"""
import math
import os

import numpy as np

try:
    import numba as nb
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


# batch * hidden below which the jitted loop beats per-step numpy
AUTO_WIDTH = 1024


def kernel_mode():
    mode = os.environ.get("MASKBENCH_NUMBA", "auto").strip().lower()
    if not HAVE_NUMBA or mode in ("0", "false", "off", "numpy"):
        return "numpy"
    if mode in ("1", "true", "on", "numba"):
        return "numba"
    return "auto"


def numba_enabled(width=0):
    mode = kernel_mode()
    return mode == "numba" or (mode == "auto" and width < AUTO_WIDTH)


def njit(func):
    if HAVE_NUMBA:
        return nb.njit(cache=True, fastmath=False)(func)
    return func


# ---------------------------------------------------------------------------
# numpy reference path

def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_forward_numpy(gx, w_hh_t):
    """Run the recurrence over precomputed input gates.

    gx: (T, B, 4H) input contribution plus bias, gate order i, f, o, g.
    w_hh_t: (H, 4H) transposed recurrent weights.
    Returns hidden states, cell states and activated gates.
    """
    T, B, G = gx.shape
    H = G // 4
    hs = np.empty((T, B, H), dtype=gx.dtype)
    cs = np.empty((T, B, H), dtype=gx.dtype)
    acts = np.empty_like(gx)
    h = np.zeros((B, H), dtype=gx.dtype)
    c = np.zeros((B, H), dtype=gx.dtype)
    for t in range(T):
        z = gx[t] + h @ w_hh_t
        a = acts[t]
        a[:, :3 * H] = _sigmoid(z[:, :3 * H])
        a[:, 3 * H:] = np.tanh(z[:, 3 * H:])
        c = a[:, H:2 * H] * c + a[:, :H] * a[:, 3 * H:]
        h = a[:, 2 * H:3 * H] * np.tanh(c)
        hs[t] = h
        cs[t] = c
    return hs, cs, acts


def lstm_backward_numpy(dhs, acts, cs, w_hh_t):
    """Backpropagate through the recurrence; returns d(gx) of shape (T, B, 4H)."""
    T, B, H = dhs.shape
    dgx = np.empty_like(acts)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, H), dtype=dhs.dtype)
    w_t = np.ascontiguousarray(w_hh_t.T)
    for t in range(T - 1, -1, -1):
        a = acts[t]
        i, f, o, g = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
        c = cs[t]
        c_prev = cs[t - 1] if t > 0 else np.zeros_like(c)
        tc = np.tanh(c)
        dh = dhs[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dgx[t]
        dz[:, :H] = dc * g * i * (1.0 - i)
        dz[:, H:2 * H] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
        dz[:, 3 * H:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = dz @ w_t
    return dgx


# ---------------------------------------------------------------------------
# numba path
# scalar libm tanh is several times slower than exp here, so both gate
# nonlinearities go through an exp-based logistic

@njit
def _sig(z):
    return 1.0 / (1.0 + math.exp(-z))


@njit
def _lstm_forward_jit(gx, w_hh_t):
    T, B, G = gx.shape
    H = G // 4
    hs = np.empty((T, B, H), dtype=gx.dtype)
    cs = np.empty((T, B, H), dtype=gx.dtype)
    acts = np.empty_like(gx)
    h = np.zeros((B, H), dtype=gx.dtype)
    c = np.zeros((B, H), dtype=gx.dtype)
    for t in range(T):
        z = np.dot(h, w_hh_t)
        for b in range(B):
            for j in range(H):
                zi = gx[t, b, j] + z[b, j]
                zf = gx[t, b, H + j] + z[b, H + j]
                zo = gx[t, b, 2 * H + j] + z[b, 2 * H + j]
                zg = gx[t, b, 3 * H + j] + z[b, 3 * H + j]
                ig = _sig(zi)
                fg = _sig(zf)
                og = _sig(zo)
                gg = 2.0 * _sig(2.0 * zg) - 1.0
                acts[t, b, j] = ig
                acts[t, b, H + j] = fg
                acts[t, b, 2 * H + j] = og
                acts[t, b, 3 * H + j] = gg
                cn = fg * c[b, j] + ig * gg
                c[b, j] = cn
                h[b, j] = og * (2.0 * _sig(2.0 * cn) - 1.0)
                cs[t, b, j] = cn
                hs[t, b, j] = h[b, j]
    return hs, cs, acts


@njit
def _lstm_backward_jit(dhs, acts, cs, w_hh_t):
    T, B, H = dhs.shape
    dgx = np.empty_like(acts)
    dh_next = np.zeros((B, H), dtype=dhs.dtype)
    dc_next = np.zeros((B, H), dtype=dhs.dtype)
    dz = np.empty((B, 4 * H), dtype=dhs.dtype)
    w_t = np.ascontiguousarray(w_hh_t.T)
    for t in range(T - 1, -1, -1):
        for b in range(B):
            for j in range(H):
                ig = acts[t, b, j]
                fg = acts[t, b, H + j]
                og = acts[t, b, 2 * H + j]
                gg = acts[t, b, 3 * H + j]
                c = cs[t, b, j]
                c_prev = cs[t - 1, b, j] if t > 0 else 0.0
                tc = 2.0 * _sig(2.0 * c) - 1.0
                dh = dhs[t, b, j] + dh_next[b, j]
                dc = dh * og * (1.0 - tc * tc) + dc_next[b, j]
                dz[b, j] = dc * gg * ig * (1.0 - ig)
                dz[b, H + j] = dc * c_prev * fg * (1.0 - fg)
                dz[b, 2 * H + j] = dh * tc * og * (1.0 - og)
                dz[b, 3 * H + j] = dc * ig * (1.0 - gg * gg)
                dc_next[b, j] = dc * fg
        dgx[t] = dz
        dh_next = np.dot(dz, w_t)
    return dgx


def lstm_forward(gx, w_hh_t):
    gx = np.ascontiguousarray(gx)
    w_hh_t = np.ascontiguousarray(w_hh_t, dtype=gx.dtype)
    if numba_enabled(gx.shape[1] * w_hh_t.shape[0]):
        return _lstm_forward_jit(gx, w_hh_t)
    return lstm_forward_numpy(gx, w_hh_t)


def lstm_backward(dhs, acts, cs, w_hh_t):
    dhs = np.ascontiguousarray(dhs, dtype=acts.dtype)
    w_hh_t = np.ascontiguousarray(w_hh_t, dtype=acts.dtype)
    if numba_enabled(dhs.shape[1] * dhs.shape[2]):
        return _lstm_backward_jit(dhs, acts, cs, w_hh_t)
    return lstm_backward_numpy(dhs, acts, cs, w_hh_t)
