"""Attention-based open-path solver speaking the JSON line solver protocol."""

from .model import PolicyModel, path_lengths, rollout, score_orders
from .serving import handle_request_line, infer_batch, serve_stdio, serve_tcp
from .training import (CHECKPOINT_VERSION, TrainConfig, Trajectory, TrainingDiverged,
                       evaluate_greedy, greedy_baseline, load_checkpoint,
                       reinforce_loss, sample_batch, sample_trajectories,
                       save_checkpoint, train, train_step)

__version__ = "0.1.0"
