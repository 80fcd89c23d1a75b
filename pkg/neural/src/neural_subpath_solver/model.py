"""Attention encoder-decoder policy over fixed-endpoint open paths.

The encoder is a plain set transformer over node coordinates; start and end
play no role until decoding, where the context vector is the concatenation of
the mean node embedding, the previously chosen node's embedding, and the
destination node's embedding. Construction is auto-regressive: the first node
is the fixed start, revisits are masked, and the destination is masked until
it is the only node left.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class EncoderBlock(nn.Module):
    def __init__(self, embed_dim: int, n_heads: int, ff_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(embed_dim, n_heads, batch_first=True)
        self.norm1 = nn.LayerNorm(embed_dim)
        self.ff = nn.Sequential(
            nn.Linear(embed_dim, ff_dim), nn.ReLU(), nn.Linear(ff_dim, embed_dim))
        self.norm2 = nn.LayerNorm(embed_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h, _ = self.attn(x, x, x, need_weights=False)
        x = self.norm1(x + h)
        return self.norm2(x + self.ff(x))


class PolicyModel(nn.Module):
    """Stochastic constructive policy for open paths.

    Args mirror the usual attention-model defaults: 128-dim embeddings,
    8 heads, 3 encoder layers, logits clipped to +-10 by tanh.
    """

    def __init__(self, embed_dim: int = 128, n_heads: int = 8, n_layers: int = 3,
                 ff_dim: int = 512, logit_clip: float = 10.0):
        super().__init__()
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ff_dim = ff_dim
        self.logit_clip = logit_clip
        self.embed = nn.Linear(2, embed_dim)
        self.blocks = nn.ModuleList(
            EncoderBlock(embed_dim, n_heads, ff_dim) for _ in range(n_layers))
        self.context_proj = nn.Linear(3 * embed_dim, embed_dim, bias=False)
        self.glimpse = nn.MultiheadAttention(embed_dim, n_heads, batch_first=True)
        self.logit_key = nn.Linear(embed_dim, embed_dim, bias=False)

    def hyperparams(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "ff_dim": self.ff_dim,
            "logit_clip": self.logit_clip,
        }

    def encode(self, coords: torch.Tensor) -> torch.Tensor:
        """(B, k, 2) coordinates in [0,1]^2 to (B, k, d) node embeddings."""
        h = self.embed(coords)
        for block in self.blocks:
            h = block(h)
        return h

    def step_log_probs(self, emb: torch.Tensor, prev: torch.Tensor, dest: torch.Tensor,
                       mask: torch.Tensor) -> torch.Tensor:
        """Log-probabilities over the next node.

        ``mask`` is True where a node must not be chosen. The context is
        [mean embedding, previous node embedding, destination embedding].
        """
        b_idx = torch.arange(emb.shape[0], device=emb.device)
        context = torch.cat(
            [emb.mean(dim=1), emb[b_idx, prev], emb[b_idx, dest]], dim=-1)
        q = self.context_proj(context).unsqueeze(1)
        glimpse, _ = self.glimpse(q, emb, emb, key_padding_mask=mask, need_weights=False)
        keys = self.logit_key(emb)
        logits = (glimpse @ keys.transpose(1, 2)).squeeze(1) / math.sqrt(self.embed_dim)
        logits = self.logit_clip * torch.tanh(logits)
        logits = logits.masked_fill(mask, float("-inf"))
        return F.log_softmax(logits, dim=-1)


def _feasibility_mask(visited: torch.Tensor, dest: torch.Tensor) -> torch.Tensor:
    """Forbid revisits, and the destination while other nodes remain."""
    mask = visited.clone()
    remaining = (~visited).sum(dim=1)
    b_idx = torch.arange(visited.shape[0], device=visited.device)
    mask[b_idx[remaining > 1], dest[remaining > 1]] = True
    return mask


def rollout(model: PolicyModel, coords: torch.Tensor, start: torch.Tensor,
            dest: torch.Tensor, mode: str = "greedy",
            generator: torch.Generator | None = None
            ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Construct one ordering per batch row from start to destination.

    Returns (orders (B, k), total log-prob (B,), path lengths (B,)). The
    total log-prob is the sum of the per-step log-probs; greedy mode is
    deterministic, sample mode draws from the step distributions.
    """
    if mode not in ("greedy", "sample"):
        raise ValueError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    B, k, _ = coords.shape
    emb = model.encode(coords)
    b_idx = torch.arange(B, device=coords.device)
    visited = torch.zeros(B, k, dtype=torch.bool, device=coords.device)
    visited[b_idx, start] = True
    chosen = [start]
    prev = start
    logp_total = torch.zeros(B, dtype=emb.dtype, device=coords.device)
    for _ in range(k - 1):
        mask = _feasibility_mask(visited, dest)
        logp = model.step_log_probs(emb, prev, dest, mask)
        if mode == "greedy":
            choice = logp.argmax(dim=-1)
        else:
            choice = torch.multinomial(logp.exp(), 1, generator=generator).squeeze(1)
        logp_total = logp_total + logp[b_idx, choice]
        visited[b_idx, choice] = True
        chosen.append(choice)
        prev = choice
    orders = torch.stack(chosen, dim=1)
    return orders, logp_total, path_lengths(coords, orders)


def score_orders(model: PolicyModel, coords: torch.Tensor, orders: torch.Tensor
                 ) -> torch.Tensor:
    """Teacher-forced log-probability of given orderings (differentiable).

    Recomputes each step's distribution under the same masking as
    :func:`rollout`; the trajectory log-prob factorizes as their sum.
    """
    B, k = orders.shape
    emb = model.encode(coords)
    b_idx = torch.arange(B, device=coords.device)
    start = orders[:, 0]
    dest = orders[:, -1]
    visited = torch.zeros(B, k, dtype=torch.bool, device=coords.device)
    visited[b_idx, start] = True
    prev = start
    total = torch.zeros(B, dtype=emb.dtype, device=coords.device)
    for t in range(1, k):
        mask = _feasibility_mask(visited, dest)
        logp = model.step_log_probs(emb, prev, dest, mask)
        choice = orders[:, t]
        total = total + logp[b_idx, choice]
        visited[b_idx, choice] = True
        prev = choice
    return total


def path_lengths(coords: torch.Tensor, orders: torch.Tensor) -> torch.Tensor:
    """Open-path lengths of (B, k) orderings over (B, k, 2) coordinates."""
    b_idx = torch.arange(coords.shape[0], device=coords.device).unsqueeze(1)
    pts = coords[b_idx, orders]
    return (pts[:, 1:] - pts[:, :-1]).norm(dim=-1).sum(dim=-1)
