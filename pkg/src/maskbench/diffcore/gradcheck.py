"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import Tensor, backward


def relative_error(analytic, numeric, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(f, x, eps=1e-5, entries=None):
    """Central differences of scalar ``f()`` wrt the tensor ``x`` (perturbed in place)."""
    flat = x.data.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    out = np.zeros(flat.size)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + eps
        fp = f().item()
        flat[i] = orig - eps
        fm = f().item()
        flat[i] = orig
        out[i] = (fp - fm) / (2 * eps)
    return out.reshape(x.shape)


def grad_check_many(f, tensors, eps=1e-5, floor=1e-8, max_entries=None, rng=None):
    """Max relative error between backward and central differences over ``tensors``.

    ``f`` takes no arguments and rebuilds its graph from the current tensor
    values each call.  With ``max_entries`` only a random subset of each
    tensor's entries is compared.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    backward(f())
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, a in zip(tensors, analytic):
        entries = None
        if max_entries is not None and t.size > max_entries:
            entries = rng.choice(t.size, size=max_entries, replace=False)
        n = numeric_grad(f, t, eps, entries)
        if entries is None:
            err = relative_error(a, n, floor)
        else:
            err = relative_error(a.reshape(-1)[entries], n.reshape(-1)[entries], floor)
        worst = max(worst, float(err.max()))
        t.grad = None
    return worst


def grad_check(f, x, eps=1e-5, floor=1e-8):
    """Max relative error of d f(x)/dx, analytic vs central difference."""
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=np.float64))
    return grad_check_many(lambda: f(x), [x], eps=eps, floor=floor)
