"""Training objectives.

nt_xent: normalized temperature-scaled cross entropy over a batch of 2N
projected views with adjacent even/odd pairing.  For each ordered positive
pair (i, j):

    L[i,j] = -log( exp(sim(z_i, z_j)/t) / sum_{k != i} exp(sim(z_i, z_k)/t) )

with cosine similarity, the denominator ranging over the other 2N-1
embeddings, and the mean taken over all 2N ordered positive terms.  The
softmax is stabilized by subtracting a detached per-row maximum, which
leaves both value and gradient exact.

bce: mean binary cross entropy on probabilities clamped to [eps, 1-eps].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, clip, exp, log, matmul, mean, mul, sqrt, sub, transpose, tsum

BCE_EPS = 1e-7


class ZeroVectorError(ValueError):
    """Cosine similarity is undefined for a zero vector."""


class BatchTooSmallError(ValueError):
    """Contrastive loss needs at least two view pairs (one negative)."""


@dataclass(frozen=True)
class NtXentConfig:
    temperature: float = 0.5
    similarity: str = "cosine"


@dataclass
class EmbeddingBatch:
    """2N projected views; views 2k and 2k+1 are the positive pair."""

    z: Tensor

    @property
    def n_views(self) -> int:
        return self.z.data.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.n_views // 2

    @staticmethod
    def pair_index(i: int) -> int:
        return i ^ 1


def cosine_similarity(u, v) -> float:
    """u.v / (|u||v|), accumulated in double precision."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise ValueError(f"cosine_similarity: lengths differ, {u.size} vs {v.size}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroVectorError("cosine_similarity: zero vector")
    return float(u @ v / (nu * nv))


def nt_xent_from_tensor(z: Tensor, temperature: float) -> Tensor:
    """Differentiable NT-Xent on a (2N, d) embedding tensor."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    n_views = z.data.shape[0]
    if n_views < 4 or n_views % 2 != 0:
        raise BatchTooSmallError(
            f"nt_xent needs an even batch of at least 4 views, got {n_views}"
        )
    norms = np.linalg.norm(z.data, axis=1)
    if np.any(norms == 0.0):
        raise ZeroVectorError("nt_xent: zero embedding vector in batch")

    sq = tsum(mul(z, z), axis=1, keepdims=True)
    zhat = z / sqrt(sq)
    sim = matmul(zhat, transpose(zhat)) / Tensor(np.float32(temperature))

    eye = np.eye(n_views, dtype=np.float32)
    offdiag = Tensor(1.0 - eye)
    pospair = np.zeros((n_views, n_views), dtype=np.float32)
    idx = np.arange(n_views)
    pospair[idx, idx ^ 1] = 1.0

    # detached per-row max over k != i keeps exp in range without touching grads
    masked = np.where(eye > 0, -np.inf, sim.data)
    rowmax = Tensor(masked.max(axis=1, keepdims=True).astype(np.float32))

    shifted = sub(sim, rowmax)
    expterm = mul(exp(shifted), offdiag)
    log_denom = log(tsum(expterm, axis=1, keepdims=True))
    pos = tsum(mul(shifted, Tensor(pospair)), axis=1, keepdims=True)
    return mean(sub(log_denom, pos))


def nt_xent(batch: EmbeddingBatch, cfg: NtXentConfig = NtXentConfig()) -> Tensor:
    """Mean contrastive loss over all ordered positive pairs of the batch."""
    return nt_xent_from_tensor(batch.z, cfg.temperature)


def bce(probabilities: Tensor, targets, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross entropy; probabilities are clamped to [eps, 1-eps]."""
    from .tensor import reshape

    y = np.asarray(targets, dtype=np.float32).reshape(-1)
    p = probabilities
    if p.data.ndim > 1:
        p = reshape(p, (p.data.size,))
    if p.data.shape[0] != y.size:
        raise ValueError(
            f"bce: length mismatch, {p.data.shape[0]} probabilities vs {y.size} targets"
        )
    pc = clip(p, eps, 1.0 - eps)
    ty = Tensor(y)
    tone = Tensor(np.float32(1.0))
    term = mul(ty, log(pc)) + mul(sub(tone, ty), log(sub(tone, pc)))
    return -mean(term)
