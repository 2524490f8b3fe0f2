"""Experiment configuration: JSON in, dataclasses out, unknown keys rejected."""
import copy
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .datagen import DataConfig
from .errors import ConfigError
from .frontend import FrontendConfig
from .maskheads import HeadConfig
from .model import ModelConfig
from .objective import MetricConfig
from .separator import SeparatorConfig
from .trainkit.schedule import TrainConfig

PRESET_DIR = Path(__file__).resolve().parent / "presets"


def _build(cls, data, where):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def model_config_from_dict(data):
    data = dict(data or {})
    unknown = sorted(set(data) - {"frontend", "separator", "head"})
    if unknown:
        raise ConfigError(f"unknown key(s) in model: {', '.join(unknown)}")
    return ModelConfig(
        frontend=_build(FrontendConfig, data.get("frontend"), "model.frontend"),
        separator=_build(SeparatorConfig, data.get("separator"), "model.separator"),
        head=_build(HeadConfig, data.get("head"), "model.head"),
    )


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: MetricConfig = field(default_factory=MetricConfig)

    def __post_init__(self):
        if self.model.head.num_sources != self.data.num_sources:
            raise ConfigError(f"head has {self.model.head.num_sources} sources but data has "
                              f"{self.data.num_sources}")
        if self.model.frontend.sample_rate != self.data.sample_rate:
            raise ConfigError("frontend and data sample rates differ")

    @classmethod
    def from_dict(cls, data):
        data = copy.deepcopy(data)
        unknown = sorted(set(data) - {"name", "seed", "data", "model", "train", "eval"})
        if unknown:
            raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
        return cls(
            name=data.get("name", "experiment"),
            seed=data.get("seed", 0),
            data=_build(DataConfig, data.get("data"), "data"),
            model=model_config_from_dict(data.get("model")),
            train=_build(TrainConfig, data.get("train"), "train"),
            eval=_build(MetricConfig, data.get("eval"), "eval"),
        )

    def to_dict(self):
        return asdict(self)

    def with_seed(self, seed):
        """Copy with every seed field set to ``seed``."""
        d = self.to_dict()
        d["seed"] = seed
        d["train"]["seed"] = seed
        return ExperimentConfig.from_dict(d)


def load_config(path_or_name):
    """Read a JSON config file, or a bundled preset by name (e.g. ``toy``)."""
    path = Path(path_or_name)
    if not path.exists():
        preset = PRESET_DIR / f"{path_or_name}.json"
        if not preset.exists():
            raise ConfigError(f"config file or preset not found: {path_or_name}")
        path = preset
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(data)


def dump_config(config):
    return json.dumps(config.to_dict(), indent=1, sort_keys=True)
