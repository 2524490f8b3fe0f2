"""Training schedule settings."""
from dataclasses import dataclass

from ..errors import ConfigError


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.5
    lr_patience_epochs: int = 3
    early_stop_patience: int = 15
    clip_norm: float = 5.0
    batch_size: int = 4
    max_epochs: int = 200
    max_minutes: float = None
    precision: str = "float32"
    clamp_db: float = 50.0
    seed: int = 0
    eval_batch_size: int = 10

    def __post_init__(self):
        positive = ("learning_rate", "lr_decay_factor", "lr_patience_epochs", "early_stop_patience",
                    "clip_norm", "batch_size", "max_epochs", "clamp_db", "eval_batch_size")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"train.{name} must be positive")
        if self.max_minutes is not None and self.max_minutes <= 0:
            raise ConfigError("train.max_minutes must be positive")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("train.precision must be float32 or float64")


@dataclass
class PlateauTracker:
    """LR-decay and early-stop counters.

    The learning rate decays when the epoch-mean training loss has not set a
    new best for ``lr_patience_epochs`` epochs; training stops after
    ``early_stop_patience`` epochs without a new best validation loss.
    """
    best_train: float = float("inf")
    best_valid: float = float("inf")
    lr_wait: int = 0
    stop_wait: int = 0

    def update(self, train_loss, valid_loss, optimizer, config):
        """Advance one epoch; returns (valid improved, should stop)."""
        if train_loss < self.best_train:
            self.best_train, self.lr_wait = train_loss, 0
        else:
            self.lr_wait += 1
            if self.lr_wait >= config.lr_patience_epochs:
                optimizer.learning_rate *= config.lr_decay_factor
                self.lr_wait = 0
        improved = valid_loss < self.best_valid
        if improved:
            self.best_valid, self.stop_wait = valid_loss, 0
        else:
            self.stop_wait += 1
        return improved, self.stop_wait >= config.early_stop_patience

    def to_dict(self):
        return {"best_train": self.best_train, "best_valid": self.best_valid,
                "lr_wait": self.lr_wait, "stop_wait": self.stop_wait}
