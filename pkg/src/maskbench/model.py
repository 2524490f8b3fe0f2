"""Full encoder -> separator -> mask head -> decoder pipeline."""
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import ConfigError
from .frontend import FrontendConfig, apply_mask, decode, encode, init_frontend_params
from .maskheads import (
    HeadConfig, deterministic_grouping, dynamic_grouping, group_masks, group_masks_batched,
    head_outputs, init_head_params,
)
from .separator import SeparatorConfig, init_separator_params, separator_forward

DTYPES = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    separator: SeparatorConfig = field(default_factory=SeparatorConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    @property
    def latent_dim(self):
        return self.frontend.feature_dim

    @property
    def feature_dim(self):
        return self.separator.feature_dim or self.frontend.feature_dim

    def to_dict(self):
        return asdict(self)


class SeparationModel:
    """Parameters plus forward pass for one pipeline configuration."""

    def __init__(self, config, params=None, seed=0, dtype="float64"):
        self.config = config
        self.dtype = DTYPES[dtype] if isinstance(dtype, str) else np.dtype(dtype).type
        if params is None:
            params = self.init_params(config, np.random.default_rng(seed), self.dtype)
        self.params = params

    @staticmethod
    def init_params(config, rng, dtype=np.float64):
        params = {}
        params.update(init_frontend_params(config.frontend, rng, dtype))
        params.update(init_separator_params(config.separator, config.latent_dim, rng, dtype))
        params.update(init_head_params(config.head, config.feature_dim, config.latent_dim, rng, dtype))
        return params

    def parameters(self):
        return self.params

    @property
    def num_sources(self):
        return self.config.head.num_sources

    def latent_and_masks(self, mixtures):
        """Encoder latent (B, N, T) and raw head outputs (B, P, N, T)."""
        fe = self.config.frontend
        x = dc.Tensor(np.asarray(mixtures, dtype=self.dtype))
        latent = encode(x, self.params["encoder.weight"], fe)
        feat = separator_forward(latent, self.config.separator, self.params)
        return latent, head_outputs(feat, self.params, self.config.head)

    def _decode(self, latent, masks, length):
        B, N, T = latent.shape
        masked = apply_mask(dc.reshape(latent, (B, 1, N, T)), masks)
        return decode(masked, self.params["decoder.weight"], self.config.frontend, length)

    def forward(self, mixtures, refs=None):
        """Separate a batch of mixtures (B, L) -> estimates (B, C, L).

        With dynamic grouping, ``refs`` (B, C, L) are needed to choose the
        loss-minimising assignment of the P outputs for each utterance; the
        chosen assignments are kept in ``self.last_assignments``.
        """
        mixtures = np.asarray(mixtures)
        single = mixtures.ndim == 1
        if single:
            mixtures = mixtures[None]
            refs = None if refs is None else np.asarray(refs)[None]
        length = mixtures.shape[-1]
        head = self.config.head
        latent, masks = self.latent_and_masks(mixtures)
        self.last_assignments = None
        if head.kind == "oversep" and head.num_outputs != head.num_sources:
            if head.grouping == "dynamic":
                if refs is None:
                    raise ConfigError("dynamic grouping needs reference sources")
                with dc.no_grad():
                    outs = self._decode(dc.Tensor(latent.data), dc.Tensor(masks.data), length).data
                assignments = [dynamic_grouping(o, r)[0].assignment for o, r in zip(outs, refs)]
                self.last_assignments = assignments
                masks = group_masks_batched(masks, assignments, head.num_sources)
            else:
                masks = group_masks(masks, deterministic_grouping(head.num_outputs, head.num_sources))
        est = self._decode(latent, masks, length)
        return dc.reshape(est, est.shape[1:]) if single else est

    def separate(self, mixture, refs=None):
        """Numpy convenience wrapper without taping."""
        with dc.no_grad():
            return self.forward(mixture, refs).data.astype(np.float64)
