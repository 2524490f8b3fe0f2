"""Optimization loop, checkpointing and complexity accounting."""
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .complexity import closed_form_params, count_macs, count_params, mac_breakdown
from .optim import AdamState, adam_step, clip_grad_norm, global_norm
from .schedule import PlateauTracker, TrainConfig
from .train import HISTORY_COLUMNS, batch_loss, train, train_step
