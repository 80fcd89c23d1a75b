"""Policy-gradient training with a shared two-rollout greedy baseline.

Each instance is rolled out in both directions (start to end, end to start).
The baseline is the mean length of the two greedy rollouts; sampled forward
and backward trajectories are reinforced against it, which keeps the
advantage centered and reduces gradient variance.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .model import PolicyModel, rollout


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending epoch and batch."""


@dataclass
class TrainConfig:
    graph_size: int = 10
    instances_per_epoch: int = 1000
    epochs: int = 5
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0
    embed_dim: int = 128
    n_heads: int = 8
    n_layers: int = 3
    ff_dim: int = 512
    eval_instances: int = 256

    def __post_init__(self):
        if self.graph_size < 3:
            raise ValueError("graph_size must be >= 3")
        if min(self.instances_per_epoch, self.epochs, self.batch_size,
               self.eval_instances) < 1:
            raise ValueError("counts must be positive")


@dataclass
class Trajectory:
    """One instance's bidirectional rollout bundle.

    Rewards are negative path lengths; the baseline is the mean length of the
    two greedy rollouts.
    """

    forward_order: np.ndarray
    backward_order: np.ndarray
    reward_forward: float
    reward_backward: float
    baseline: float


def sample_trajectories(model: PolicyModel, coords: torch.Tensor,
                        generator: torch.Generator | None = None) -> list[Trajectory]:
    """Sample one bidirectional :class:`Trajectory` per batch row.

    Also asserts that each rollout's accumulated log-probability matches the
    teacher-forced per-step sum, i.e. the trajectory probability factorizes.
    """
    from .model import score_orders

    B, k, _ = coords.shape
    start, dest = _endpoints(B, k)
    baseline = greedy_baseline(model, coords)
    with torch.no_grad():
        ord_f, logp_f, len_f = rollout(model, coords, start, dest, mode="sample",
                                       generator=generator)
        ord_b, logp_b, len_b = rollout(model, coords, dest, start, mode="sample",
                                       generator=generator)
        assert torch.allclose(logp_f, score_orders(model, coords, ord_f), atol=1e-5)
        assert torch.allclose(logp_b, score_orders(model, coords, ord_b), atol=1e-5)
    return [
        Trajectory(
            forward_order=ord_f[i].numpy(),
            backward_order=ord_b[i].numpy(),
            reward_forward=-float(len_f[i]),
            reward_backward=-float(len_b[i]),
            baseline=float(baseline[i]),
        )
        for i in range(B)
    ]


def build_model(cfg: TrainConfig) -> PolicyModel:
    torch.manual_seed(cfg.seed)
    return PolicyModel(cfg.embed_dim, cfg.n_heads, cfg.n_layers, cfg.ff_dim)


def sample_batch(rng: np.random.Generator, batch: int, k: int) -> torch.Tensor:
    """Uniform unit-square instances; endpoints are list positions 0 and k-1."""
    return torch.from_numpy(rng.random((batch, k, 2), dtype=np.float64)).float()


def _endpoints(batch: int, k: int) -> tuple[torch.Tensor, torch.Tensor]:
    return (torch.zeros(batch, dtype=torch.long),
            torch.full((batch,), k - 1, dtype=torch.long))


def greedy_baseline(model: PolicyModel, coords: torch.Tensor) -> torch.Tensor:
    """Mean length of the forward and backward greedy rollouts, per instance."""
    B, k, _ = coords.shape
    start, dest = _endpoints(B, k)
    with torch.no_grad():
        _, _, len_f = rollout(model, coords, start, dest, mode="greedy")
        _, _, len_b = rollout(model, coords, dest, start, mode="greedy")
    return (len_f + len_b) / 2.0


def reinforce_loss(logp_f: torch.Tensor, len_f: torch.Tensor,
                   logp_b: torch.Tensor, len_b: torch.Tensor,
                   baseline: torch.Tensor) -> torch.Tensor:
    """Advantage-weighted log-likelihood over both directions.

    A batch where every sampled length equals the baseline has zero advantage
    and therefore a zero gradient.
    """
    adv_f = (len_f - baseline).detach()
    adv_b = (len_b - baseline).detach()
    return (adv_f * logp_f + adv_b * logp_b).mean()


def train_step(model: PolicyModel, optimizer: torch.optim.Optimizer,
               coords: torch.Tensor, generator: torch.Generator) -> float:
    B, k, _ = coords.shape
    start, dest = _endpoints(B, k)
    baseline = greedy_baseline(model, coords)
    _, logp_f, len_f = rollout(model, coords, start, dest, mode="sample",
                               generator=generator)
    _, logp_b, len_b = rollout(model, coords, dest, start, mode="sample",
                               generator=generator)
    loss = reinforce_loss(logp_f, len_f, logp_b, len_b, baseline)
    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def evaluate_greedy(model: PolicyModel, coords: torch.Tensor) -> float:
    """Mean best-of-two greedy path length over an evaluation set."""
    B, k, _ = coords.shape
    start, dest = _endpoints(B, k)
    with torch.no_grad():
        _, _, len_f = rollout(model, coords, start, dest, mode="greedy")
        _, _, len_b = rollout(model, coords, dest, start, mode="greedy")
    return float(torch.minimum(len_f, len_b).mean())


def train(cfg: TrainConfig, out_path: str | Path | None = None,
          progress=None) -> tuple[PolicyModel, dict]:
    """Train per the config; returns the model and its history.

    History records the greedy evaluation mean before training (epoch 0) and
    after every epoch, plus per-batch losses. Raises
    :class:`TrainingDiverged` on a non-finite loss.
    """
    model = build_model(cfg)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    sampler = torch.Generator().manual_seed(cfg.seed)
    eval_coords = sample_batch(rng, cfg.eval_instances, cfg.graph_size)
    history: dict = {"eval_mean": [evaluate_greedy(model, eval_coords)],
                     "loss": [], "epoch_seconds": []}
    batches = max(1, cfg.instances_per_epoch // cfg.batch_size)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        for step in range(batches):
            coords = sample_batch(rng, cfg.batch_size, cfg.graph_size)
            try:
                loss = train_step(model, optimizer, coords, sampler)
            except RuntimeError as e:
                # torch.multinomial rejects the nan/inf probabilities
                # produced by exploded weights
                raise TrainingDiverged(
                    f"rollout failed at epoch {epoch}, batch {step}: {e}") from e
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss {loss} at epoch {epoch}, batch {step}")
            history["loss"].append(loss)
        history["eval_mean"].append(evaluate_greedy(model, eval_coords))
        history["epoch_seconds"].append(time.perf_counter() - t0)
        if progress is not None:
            progress(epoch, history)
    if out_path is not None:
        save_checkpoint(out_path, model, cfg, history)
    return model, history


CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, model: PolicyModel, cfg: TrainConfig,
                    history: dict | None = None) -> Path:
    """Versioned archive: weights plus the full config and seed."""
    path = Path(path)
    torch.save({
        "format_version": CHECKPOINT_VERSION,
        "model_hyperparams": model.hyperparams(),
        "model_state": model.state_dict(),
        "train_config": asdict(cfg),
        "seed": cfg.seed,
        "history": history or {},
    }, path)
    return path


def load_checkpoint(path: str | Path) -> tuple[PolicyModel, dict]:
    """Restore a checkpoint; returns (model in eval mode, metadata dict)."""
    payload = torch.load(path, weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version!r}")
    hp = payload["model_hyperparams"]
    model = PolicyModel(hp["embed_dim"], hp["n_heads"], hp["n_layers"], hp["ff_dim"],
                        hp.get("logit_clip", 10.0))
    model.load_state_dict(payload["model_state"])
    model.eval()
    meta = {k: payload[k] for k in ("train_config", "seed", "history")}
    return model, meta
