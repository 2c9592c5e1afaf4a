"""Temperature-scaled contrastive objectives over cosine similarities.

Two per-instance losses share one softmax denominator over every other
instance in the batch: a class-supervised form whose positives are all
instances with the same group key, and an instance form whose positives are
the other views/patches of the same source image. The mixed batch objective
averages per-source means of whichever form applies, so synthetic and
authentic instances serve as negatives for each other.
"""

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class EmbeddingBatch:
    """Stacked projector outputs with their contrastive bookkeeping.

    ``group_key`` carries the class identity (UGC instances use their source
    id), ``source_key`` the originating image (defaults to group_key), and
    ``tau`` the softmax temperature.
    """

    z: torch.Tensor
    group_key: list
    is_ugc: list
    tau: float
    source_key: list | None = None

    def __post_init__(self):
        if not torch.is_tensor(self.z):
            self.z = torch.as_tensor(np.asarray(self.z), dtype=torch.float32)
        if self.z.ndim != 2 or self.z.shape[0] < 2:
            raise ValueError(
                f"embeddings must be NxK with N >= 2, got {tuple(self.z.shape)}"
            )
        n = self.z.shape[0]
        if len(self.group_key) != n or len(self.is_ugc) != n:
            raise ValueError("group_key/is_ugc length must match embeddings")
        if self.source_key is not None and len(self.source_key) != n:
            raise ValueError("source_key length must match embeddings")
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")

    @property
    def n_instances(self) -> int:
        return self.z.shape[0]

    def sources(self) -> list:
        return self.source_key if self.source_key is not None else self.group_key


def cosine_similarity(a, b) -> float:
    """phi(a, b) = a.b / (|a||b|); undefined (error) for zero vectors."""
    av = torch.as_tensor(a, dtype=torch.float64).flatten()
    bv = torch.as_tensor(b, dtype=torch.float64).flatten()
    if av.shape != bv.shape:
        raise ValueError(f"dimension mismatch: {tuple(av.shape)} vs {tuple(bv.shape)}")
    na, nb = torch.linalg.vector_norm(av), torch.linalg.vector_norm(bv)
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity undefined for zero vectors")
    return float(torch.clamp(av @ bv / (na * nb), -1.0, 1.0))


def _similarity_logits(z: torch.Tensor, tau: float) -> torch.Tensor:
    """Pairwise cosine similarities / tau with the diagonal masked out."""
    norms = torch.linalg.vector_norm(z, dim=1)
    if bool((norms == 0).any()):
        bad = int(torch.nonzero(norms == 0)[0])
        raise ValueError(f"instance {bad} has a zero embedding; phi undefined")
    zn = z / norms.unsqueeze(1)
    sim = torch.clamp(zn @ zn.T, -1.0, 1.0)
    logits = sim / tau
    eye = torch.eye(len(z), dtype=torch.bool, device=z.device)
    return logits.masked_fill(eye, float("-inf"))


def _positive_mask(keys: list, device) -> torch.Tensor:
    arr = np.asarray(keys, dtype=object)
    mask = torch.as_tensor(arr[:, None] == arr[None, :], device=device)
    mask.fill_diagonal_(False)
    return mask


def supervised_nt_xent(batch: EmbeddingBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Class-supervised per-instance losses and their mean.

    L_i = log sum_{k != i} exp(phi_ik / tau) - mean_{j in P(i)} phi_ij / tau,
    with P(i) the other instances sharing i's group key. Stabilized by the
    row max before exponentiation.
    """
    logits = _similarity_logits(batch.z, batch.tau)
    pos = _positive_mask(batch.group_key, batch.z.device)
    counts = pos.sum(dim=1)
    if bool((counts == 0).any()):
        bad = int(torch.nonzero(counts == 0)[0])
        raise ValueError(
            f"instance {bad} (group {batch.group_key[bad]!r}) has no positives"
        )
    row_max = logits.max(dim=1, keepdim=True).values
    log_den = row_max.squeeze(1) + torch.log(
        torch.exp(logits - row_max).sum(dim=1)
    )
    pos_mean = (logits.masked_fill(~pos, 0.0).sum(dim=1)) / counts
    per_instance = log_den - pos_mean
    return per_instance, per_instance.mean()


def instance_nt_xent(batch: EmbeddingBatch) -> tuple[torch.Tensor, torch.Tensor]:
    """Instance-discrimination per-instance losses and their mean.

    Positives are the other views/patches of the same source image; the
    denominator still spans every other instance in the batch. Reduces to the
    class-supervised loss when groups coincide with sources.
    """
    logits = _similarity_logits(batch.z, batch.tau)
    log_probs = torch.log_softmax(logits, dim=1)
    sources = batch.sources()
    per = []
    for i in range(batch.n_instances):
        pos_idx = [j for j in range(batch.n_instances)
                   if j != i and sources[j] == sources[i]]
        if not pos_idx:
            raise ValueError(
                f"instance {i} (source {sources[i]!r}) is alone in the batch; "
                "instance loss needs at least one paired view"
            )
        per.append(-log_probs[i, pos_idx].mean())
    per_instance = torch.stack(per)
    return per_instance, per_instance.mean()


def mixed_loss(batch: EmbeddingBatch) -> torch.Tensor:
    """Combined objective: class positives for synthetic instances, own-source
    positives for UGC, averaged per source image and then over sources."""
    is_ugc = torch.as_tensor(batch.is_ugc, dtype=torch.bool)
    per = torch.zeros(batch.n_instances, dtype=batch.z.dtype, device=batch.z.device)
    if bool((~is_ugc).any()):
        syn_sub = _subset_loss(batch, ~is_ugc, supervised=True)
        per = per + syn_sub
    if bool(is_ugc.any()):
        ugc_sub = _subset_loss(batch, is_ugc, supervised=False)
        per = per + ugc_sub

    sources = batch.sources()
    order = []
    members: dict = {}
    for i, s in enumerate(sources):
        if s not in members:
            members[s] = []
            order.append(s)
        members[s].append(i)
    per_source = torch.stack([per[members[s]].mean() for s in order])
    return per_source.mean()


def _subset_loss(batch: EmbeddingBatch, keep: torch.Tensor, supervised: bool):
    """Per-instance losses for a population subset, zeros elsewhere.

    Both routes score every kept instance against the *full* batch (the
    denominator spans synthetic and UGC alike); only the positive sets differ.
    """
    logits = _similarity_logits(batch.z, batch.tau)
    keys = batch.group_key if supervised else batch.sources()
    pos = _positive_mask(keys, batch.z.device)
    keep_idx = torch.nonzero(keep).squeeze(1)
    counts = pos[keep_idx].sum(dim=1)
    if bool((counts == 0).any()):
        bad = int(keep_idx[torch.nonzero(counts == 0)[0]])
        raise ValueError(f"instance {bad} ({keys[bad]!r}) has no positives")
    row_max = logits[keep_idx].max(dim=1, keepdim=True).values
    log_den = row_max.squeeze(1) + torch.log(
        torch.exp(logits[keep_idx] - row_max).sum(dim=1)
    )
    pos_mean = logits[keep_idx].masked_fill(~pos[keep_idx], 0.0).sum(dim=1) / counts
    out = torch.zeros(batch.n_instances, dtype=batch.z.dtype, device=batch.z.device)
    out[keep_idx] = log_den - pos_mean
    return out
