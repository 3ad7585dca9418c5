"""Temperature-scaled contrastive loss over cosine similarities.

A batch of 2N embeddings is ordered as interleaved positive pairs:
positions (0, 1), (2, 3), ... come from the two views of one source
patch. For anchor i with positive j, the per-pair loss is

    l(i, j) = -log( exp(sim(i, j)/tau) / sum_{k != i} exp(sim(i, k)/tau) )

with sim the cosine similarity. Only k = i is excluded from the
denominator; the positive j is one of its terms, so l >= 0 always. The
batch total is the arithmetic mean over all 2N ordered positive pairs.
Log-sum-exp is evaluated with max subtraction for numeric stability, and
zero-norm embeddings are guarded by an epsilon (sim(0, y) = 0) rather
than erroring, since they can occur transiently early in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .errors import ValidationError


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.5
    eps: float = 1e-12

    def __post_init__(self) -> None:
        if self.temperature <= 0.0:
            raise ValidationError(f"temperature must be > 0, got {self.temperature}")
        if self.eps <= 0.0:
            raise ValidationError(f"eps must be > 0, got {self.eps}")


@dataclass
class BatchLossReport:
    """Similarity matrix, the 2N ordered per-pair losses, and their mean.

    Tensors stay attached to the autograd graph when the embeddings
    require grad; callers detach for logging.
    """

    similarity_matrix: torch.Tensor
    per_pair_losses: torch.Tensor
    total: torch.Tensor
    temperature: float
    batch_size: int  # N source patches (2N embeddings)

    def log_record(self, step: int) -> dict:
        return {
            "step": int(step),
            "total": float(self.total.detach()),
            "tau": self.temperature,
            "batch_size": self.batch_size,
        }


def cosine_sim(x: torch.Tensor, y: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """Cosine similarity of two vectors, in [-1, 1]; sim(0, y) = 0 by the eps guard."""
    x = torch.as_tensor(x)
    y = torch.as_tensor(y)
    if x.shape != y.shape or x.dim() != 1:
        raise ValidationError(f"cosine_sim expects equal-width vectors, got {x.shape} and {y.shape}")
    denom = x.norm().clamp_min(eps) * y.norm().clamp_min(eps)
    return torch.clamp(x.dot(y) / denom, -1.0, 1.0)


def similarity_matrix(z: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    """All pairwise cosine similarities of the rows of ``z``, clamped to [-1, 1]."""
    if z.dim() != 2:
        raise ValidationError(f"embeddings must be 2-D, got shape {tuple(z.shape)}")
    normed = z / z.norm(dim=1, keepdim=True).clamp_min(eps)
    return torch.clamp(normed @ normed.T, -1.0, 1.0)


def ntxent_pair(z_all: torch.Tensor, i: int, j: int, config: LossConfig = LossConfig()) -> torch.Tensor:
    """Per-pair loss l(i, j) for anchor i and positive j within ``z_all``."""
    if i == j:
        raise ValidationError("a positive pair needs two distinct indices")
    n_emb = z_all.shape[0]
    if n_emb < 2:
        raise ValidationError(f"need at least 2 embeddings, got {n_emb}")
    if not (0 <= i < n_emb and 0 <= j < n_emb):
        raise ValidationError(f"pair ({i}, {j}) out of range for {n_emb} embeddings")
    sim = similarity_matrix(z_all, config.eps)
    logits = sim[i] / config.temperature
    logits = logits.clone()
    logits[i] = float("-inf")  # exclude only the anchor itself
    return torch.logsumexp(logits, dim=0) - sim[i, j] / config.temperature


def ntxent_batch(z_all: torch.Tensor, config: LossConfig = LossConfig()) -> BatchLossReport:
    """Mean loss over all ordered positive pairs of an interleaved batch.

    ``z_all`` has shape (2N, D) with rows (2m, 2m+1) forming pair m. The
    per-pair losses are ordered l(0,1), l(1,0), l(2,3), l(3,2), ...
    """
    if z_all.dim() != 2:
        raise ValidationError(f"embeddings must be 2-D, got shape {tuple(z_all.shape)}")
    n_emb = z_all.shape[0]
    if n_emb < 2 or n_emb % 2 != 0:
        raise ValidationError(f"embedding count must be even and >= 2, got {n_emb}")
    sim = similarity_matrix(z_all, config.eps)
    logits = sim / config.temperature
    logits = logits.masked_fill(torch.eye(n_emb, dtype=torch.bool, device=z_all.device), float("-inf"))
    denom = torch.logsumexp(logits, dim=1)
    anchor = torch.arange(n_emb, device=z_all.device)
    partner = anchor ^ 1  # 0<->1, 2<->3, ...
    losses = denom - logits[anchor, partner]
    return BatchLossReport(
        similarity_matrix=sim,
        per_pair_losses=losses,
        total=losses.mean(),
        temperature=config.temperature,
        batch_size=n_emb // 2,
    )
