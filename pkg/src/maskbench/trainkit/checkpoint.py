"""Checkpoint container.

Layout: one line of JSON (format version, config, epoch, metrics, training
state scalars, tensor names) followed by one block per tensor, each a
``name=<name>`` line and a tensor in the diffcore wire format.
"""
import json
from pathlib import Path

import numpy as np

from .. import diffcore as dc
from ..diffcore.serialize import SerializationError, read_tensor, tensor_to_bytes
from ..errors import CheckpointError
from ..model import SeparationModel
from .optim import AdamState

FORMAT_VERSION = 1


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_checkpoint(model, path, experiment=None, epoch=0, metrics=None, optimizer=None, state=None):
    """Write parameters, optimizer moments and loop state to ``path``."""
    from ..config import ExperimentConfig
    if experiment is None:
        experiment = ExperimentConfig(model=model.config)
    tensors = [(f"param/{k}", p.data) for k, p in model.params.items()]
    opt_header = None
    if optimizer is not None:
        opt_header = {k: getattr(optimizer, k) for k in ("learning_rate", "beta1", "beta2", "eps", "step")}
        for k in model.params:
            if k in optimizer.m:
                tensors.append((f"adam_m/{k}", optimizer.m[k]))
                tensors.append((f"adam_v/{k}", optimizer.v[k]))
    header = {
        "format_version": FORMAT_VERSION,
        "config": experiment.to_dict(),
        "dtype": np.dtype(model.dtype).name,
        "epoch": epoch,
        "metrics": metrics or {},
        "optimizer": opt_header,
        "state": state or {},
        "tensors": [name for name, _ in tensors],
    }
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_dumps(header).encode("utf-8") + b"\n")
        for name, arr in tensors:
            fh.write(f"name={name}\n".encode("utf-8"))
            fh.write(tensor_to_bytes(arr))
    tmp.replace(path)


def read_checkpoint(path):
    """Raw (header, {name: float32 array}) of a checkpoint file."""
    try:
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            if header.get("format_version") != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported checkpoint format {header.get('format_version')!r}")
            arrays = {}
            for name in header["tensors"]:
                line = fh.readline().decode("utf-8").rstrip("\n")
                if line != f"name={name}":
                    raise CheckpointError(f"{path}: expected block for {name!r}, found {line[:60]!r}")
                try:
                    arrays[name] = read_tensor(fh)
                except SerializationError as exc:
                    raise CheckpointError(f"{path}: tensor {name!r}: {exc}") from None
    except (OSError, json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    return header, arrays


def load_checkpoint(path, expect_model=None):
    """Rebuild (model, info) from ``path``.

    ``info`` carries the experiment config, epoch, metrics, optimizer state
    and loop state.  If ``expect_model`` (a ModelConfig) is given, a
    differing architecture raises :class:`CheckpointError`.
    """
    from ..config import ExperimentConfig
    header, arrays = read_checkpoint(path)
    try:
        experiment = ExperimentConfig.from_dict(header["config"])
    except ValueError as exc:
        raise CheckpointError(f"{path}: invalid embedded config: {exc}") from None
    cfg = experiment.model
    if expect_model is not None and expect_model.to_dict() != cfg.to_dict():
        diffs = [f"{sec}.{k}" for sec in ("frontend", "separator", "head")
                 for k, v in expect_model.to_dict()[sec].items() if cfg.to_dict()[sec][k] != v]
        raise CheckpointError(f"{path}: checkpoint config mismatch in {', '.join(diffs)}")
    dtype = header.get("dtype", "float32")
    template = SeparationModel.init_params(cfg, np.random.default_rng(0), np.dtype(dtype).type)
    params = {}
    for name, t in template.items():
        arr = arrays.get(f"param/{name}")
        if arr is None:
            raise CheckpointError(f"{path}: missing tensor {name!r}")
        if arr.shape != t.shape:
            raise CheckpointError(f"{path}: tensor {name!r} has shape {arr.shape}, model expects {t.shape}")
        params[name] = dc.Tensor(arr.astype(dtype), requires_grad=True)
    extra = sorted(set(k[6:] for k in arrays if k.startswith("param/")) - set(template))
    if extra:
        raise CheckpointError(f"{path}: unexpected tensor(s) {', '.join(extra)}")
    model = SeparationModel(cfg, params=params, dtype=dtype)
    optimizer = None
    if header.get("optimizer"):
        optimizer = AdamState(**header["optimizer"])
        for name in params:
            if f"adam_m/{name}" in arrays:
                optimizer.m[name] = arrays[f"adam_m/{name}"].astype(dtype)
                optimizer.v[name] = arrays[f"adam_v/{name}"].astype(dtype)
    info = {"experiment": experiment, "epoch": header["epoch"], "metrics": header["metrics"],
            "optimizer": optimizer, "state": header["state"]}
    return model, info
