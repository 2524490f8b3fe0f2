"""Mask-estimation heads and the grouping algebra that connects them.

Three interchangeable heads map the separator feature (..., H, T) to
multiplicative masks (..., C, N, T):

* ``shallow``  -- one affine map plus activation per source;
* ``oversep``  -- P >= C affine maps whose masks are summed in groups;
* ``deep_mlp`` -- a per-source 3-layer MLP (tanh, tanh, activation).

When the activation is the identity, a grouped overseparation head is
exactly a shallow head with summed weights (:func:`collapse_linear_head`);
with a nonlinear activation it is not.
"""
import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .errors import ConfigError, ResourceError

HEAD_KINDS = ("shallow", "oversep", "deep_mlp")
GROUPINGS = ("deterministic", "dynamic")
DEFAULT_ENUMERATION_CAP = 2 ** 20


@dataclass
class HeadConfig:
    kind: str = "shallow"
    num_sources: int = 2
    num_outputs: int = None
    activation: str = "relu"
    mlp_hidden: int = 64
    mlp_layers: int = 3
    grouping: str = "deterministic"

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise ConfigError(f"unknown head kind {self.kind!r}; expected one of {HEAD_KINDS}")
        if self.activation not in dc.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.num_sources < 1:
            raise ConfigError("num_sources must be positive")
        if self.num_outputs is None:
            self.num_outputs = self.num_sources
        if self.kind == "shallow" and self.num_outputs != self.num_sources:
            raise ConfigError("shallow head has exactly one output per source (P = C)")
        if self.kind == "oversep" and self.num_outputs < self.num_sources:
            raise ConfigError(f"oversep head needs P >= C, got P={self.num_outputs}, C={self.num_sources}")
        if self.kind == "deep_mlp":
            if self.mlp_layers != 3:
                raise ConfigError("deep_mlp head is fixed at 3 layers")
            if self.mlp_hidden < 1:
                raise ConfigError("mlp_hidden must be positive")
        if self.grouping not in GROUPINGS:
            raise ConfigError(f"unknown grouping {self.grouping!r}")


@dataclass(frozen=True)
class GroupingScheme:
    """Assignment of P head outputs to C groups (``assignment[p]`` is p's group)."""
    assignment: tuple
    num_groups: int

    def __post_init__(self):
        a = tuple(int(v) for v in self.assignment)
        object.__setattr__(self, "assignment", a)
        if self.num_groups < 1 or not a:
            raise ConfigError("grouping needs at least one output and one group")
        if any(not 0 <= v < self.num_groups for v in a):
            raise ConfigError(f"group index out of range in {a} for C={self.num_groups}")

    @property
    def num_outputs(self):
        return len(self.assignment)

    def members(self, k):
        return [p for p, g in enumerate(self.assignment) if g == k]

    def matrix(self, dtype=np.float64):
        """C x P 0/1 matrix with a one where output p belongs to group k."""
        m = np.zeros((self.num_groups, self.num_outputs), dtype=dtype)
        m[list(self.assignment), range(self.num_outputs)] = 1
        return m

    def is_contiguous(self):
        a = self.assignment
        return all(a[i] <= a[i + 1] for i in range(len(a) - 1)) and \
            all(self.members(k) for k in range(self.num_groups))


def deterministic_grouping(P, C):
    """Contiguous equal blocks: the first P/C outputs form group 0, and so on."""
    if C < 1 or P < C or P % C:
        raise ConfigError(f"deterministic grouping needs C | P, got P={P}, C={C}")
    return GroupingScheme(tuple(p * C // P for p in range(P)), C)


def identity_grouping(C):
    return GroupingScheme(tuple(range(C)), C)


# ---------------------------------------------------------------------------
# parameters

def _uniform(rng, k, shape, dtype):
    return dc.Tensor(rng.uniform(-k, k, size=shape).astype(dtype), requires_grad=True)


def init_head_params(config, feature_dim, latent_dim, rng, dtype=np.float64):
    H, N = feature_dim, latent_dim
    params = {}
    if config.kind in ("shallow", "oversep"):
        P = config.num_outputs
        k = 1 / math.sqrt(H)
        params["head.weight"] = _uniform(rng, k, (P, N, H), dtype)
        params["head.bias"] = _uniform(rng, k, (P, N, 1), dtype)
    else:
        C, D = config.num_sources, config.mlp_hidden
        for name, (fan_out, fan_in) in (("l1", (D, H)), ("l2", (D, D)), ("l3", (N, D))):
            k = 1 / math.sqrt(fan_in)
            params[f"head.{name}.weight"] = _uniform(rng, k, (C, fan_out, fan_in), dtype)
            params[f"head.{name}.bias"] = _uniform(rng, k, (C, fan_out, 1), dtype)
    if config.activation == "prelu":
        params["head.alpha"] = dc.Tensor(np.full((1,), 0.25, dtype), requires_grad=True)
    return params


def head_param_count(config, feature_dim, latent_dim):
    H, N = feature_dim, latent_dim
    extra = 1 if config.activation == "prelu" else 0
    if config.kind in ("shallow", "oversep"):
        return config.num_outputs * (N * H + N) + extra
    C, D = config.num_sources, config.mlp_hidden
    return C * ((D * H + D) + (D * D + D) + (N * D + N)) + extra


# ---------------------------------------------------------------------------
# forward

def _affine(feat, weight, bias):
    """Per-output affine map: weight (P, N, H) @ feat (..., H, T) -> (..., P, N, T)."""
    feat = dc.as_tensor(feat)
    if feat.shape[-2] != weight.shape[-1]:
        raise dc.DimensionError(f"feature dim {feat.shape[-2]} does not match head input {weight.shape[-1]}")
    x = dc.reshape(feat, feat.shape[:-2] + (1,) + feat.shape[-2:])
    return dc.matmul(weight, x) + bias


def _act(x, f, params):
    return dc.activation(x, f, params.get("head.alpha") if f == "prelu" else None)


def shallow_forward(feat, params, f="relu"):
    """M_k = f(W_k feat + b_k) for every source k; returns (..., C, N, T)."""
    return _act(_affine(feat, params["head.weight"], params["head.bias"]), f, params)


def oversep_forward(feat, params, f="relu", num_sources=None):
    """P independent affine+activation masks (..., P, N, T), before grouping."""
    P = params["head.weight"].shape[0]
    if num_sources is not None and P < num_sources:
        raise ConfigError(f"oversep head needs P >= C, got P={P}, C={num_sources}")
    return _act(_affine(feat, params["head.weight"], params["head.bias"]), f, params)


def group_masks(masks, scheme):
    """Sum member masks per group: (..., P, N, T) -> (..., C, N, T).

    A group without members yields an all-zero mask.
    """
    if not isinstance(scheme, GroupingScheme):
        raise ConfigError("group_masks needs a GroupingScheme")
    masks = dc.as_tensor(masks)
    P = masks.shape[-3]
    if scheme.num_outputs != P:
        raise ConfigError(f"grouping covers {scheme.num_outputs} outputs but the head produced {P}")
    lead, (N, T) = masks.shape[:-3], masks.shape[-2:]
    flat = dc.reshape(masks, lead + (P, N * T))
    grouped = dc.matmul(scheme.matrix(masks.dtype), flat)
    return dc.reshape(grouped, lead + (scheme.num_groups, N, T))


def group_masks_batched(masks, assignments, num_groups):
    """Like :func:`group_masks` with one scheme per leading batch element."""
    B, P, N, T = masks.shape
    mats = np.stack([GroupingScheme(a, num_groups).matrix(masks.dtype) for a in assignments])
    grouped = dc.matmul(mats, dc.reshape(masks, (B, P, N * T)))
    return dc.reshape(grouped, (B, num_groups, N, T))


def deep_mlp_forward(feat, params, f="relu"):
    """Per-source MLP H -> D -> D -> N with tanh hidden layers; returns (..., C, N, T)."""
    h = dc.tanh(_affine(feat, params["head.l1.weight"], params["head.l1.bias"]))
    h = dc.tanh(dc.matmul(params["head.l2.weight"], h) + params["head.l2.bias"])
    out = dc.matmul(params["head.l3.weight"], h) + params["head.l3.bias"]
    return _act(out, f, params)


def head_outputs(feat, params, config):
    """Raw head outputs: P masks for oversep, C masks otherwise."""
    if config.kind == "deep_mlp":
        return deep_mlp_forward(feat, params, config.activation)
    if config.kind == "oversep":
        return oversep_forward(feat, params, config.activation, config.num_sources)
    return shallow_forward(feat, params, config.activation)


def head_forward(feat, params, config):
    """C masks, applying deterministic grouping for an oversep head."""
    out = head_outputs(feat, params, config)
    if config.kind == "oversep" and config.num_outputs != config.num_sources:
        out = group_masks(out, deterministic_grouping(config.num_outputs, config.num_sources))
    return out


def collapse_linear_head(params, scheme, f="identity"):
    """Sum the affine maps of each group into one shallow head.

    Only valid for the identity activation, where summing masks and summing
    weights commute; any other activation raises ``ContractError``.
    """
    if f != "identity":
        raise dc.ContractError(f"linear collapse is only exact for f=identity, not {f!r}")
    A = scheme.matrix(params["head.weight"].dtype)
    W = params["head.weight"].data
    b = params["head.bias"].data
    if W.shape[0] != scheme.num_outputs:
        raise ConfigError("grouping does not match the number of head outputs")
    return {
        "head.weight": dc.Tensor(np.tensordot(A, W, axes=(1, 0)), requires_grad=True),
        "head.bias": dc.Tensor(np.tensordot(A, b, axes=(1, 0)), requires_grad=True),
    }


# ---------------------------------------------------------------------------
# dynamic grouping

def _default_group_loss(grouped, refs):
    from .objective import neg_snr_numpy
    return neg_snr_numpy(grouped, refs)


def dynamic_grouping(est_waves, refs, loss_fn=None, cap=DEFAULT_ENUMERATION_CAP):
    """Exhaustively search all C**P assignments of outputs to groups.

    Member waveforms are summed per group and scored with
    ``loss_fn(grouped (C, L), refs (C, L)) -> float`` (default: mean negative
    SNR).  Returns ``(GroupingScheme, loss)``; ties keep the lexicographically
    smallest assignment.
    """
    est = np.asarray(est_waves, dtype=np.float64)
    refs = np.asarray(refs, dtype=np.float64)
    P, C = est.shape[0], refs.shape[0]
    if C ** P > cap:
        raise ResourceError(f"{C}**{P} = {C ** P} assignments exceeds the cap of {cap}; "
                            "use deterministic grouping instead")
    loss_fn = loss_fn or _default_group_loss
    best, best_loss = None, math.inf
    for assignment in itertools.product(range(C), repeat=P):
        grouped = np.zeros((C,) + est.shape[1:])
        for p, k in enumerate(assignment):
            grouped[k] += est[p]
        loss = float(loss_fn(grouped, refs))
        if loss < best_loss:
            best, best_loss = assignment, loss
    return GroupingScheme(best, C), best_loss
