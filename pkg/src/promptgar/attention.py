"""Multi-head attention, with optional relative instance bias on self-attention."""

from __future__ import annotations

import math

import numpy as np

from .nn import F, Linear, Module, Tensor, parameter

SENT = -1  # class token: never matches any instance
PAD = -2  # padding slot in a batch


def same_instance(ids_q: np.ndarray, ids_k: np.ndarray) -> np.ndarray:
    """(…, Lq, Lk) mask of query/key pairs that belong to the same real instance."""
    ids_q = np.asarray(ids_q)
    ids_k = np.asarray(ids_k)
    return (ids_q[..., :, None] == ids_k[..., None, :]) & (ids_q[..., :, None] >= 0)


def _check_ids(rows: Tensor, ids: np.ndarray, what: str) -> None:
    if ids.shape[-1] != rows.shape[-2]:
        raise ValueError(f"{what}: {ids.shape[-1]} ids for {rows.shape[-2]} rows")


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> Tensor:
    """softmax(QKᵀ/√d)V over (..., L, d) heads; ``key_mask`` (..., Lk) drops keys."""
    logits = F.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    mask = None if key_mask is None else key_mask[..., None, :]
    return F.matmul(F.softmax(logits, axis=-1, mask=mask), v)


def rel_instance_attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    ids_q,
    ids_k,
    rel: Tensor,
    epsilon: float,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Scaled dot-product attention plus ε·(Q_i·R) on same-instance pairs.

    q, k, v: (B, H, L, d); ids: (B, L) or (L,); rel: (H, d).
    Pairs with different ids, or involving SENT/PAD, get no bias.
    """
    ids_q = np.asarray(ids_q)
    ids_k = np.asarray(ids_k)
    _check_ids(q, ids_q, "rel_instance_attention queries")
    _check_ids(k, ids_k, "rel_instance_attention keys")
    _check_ids(v, ids_k, "rel_instance_attention values")
    logits = F.matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
    same = same_instance(ids_q, ids_k).astype(np.float64)
    if same.ndim == 3:
        same = same[:, None]  # broadcast over heads
    heads, d = rel.shape
    q_dot_r = F.matmul(q, rel.reshape(heads, d, 1))  # (B, H, Lq, 1)
    logits = logits + (q_dot_r * same) * epsilon
    mask = None if key_mask is None else np.asarray(key_mask)[..., None, :]
    if mask is not None and mask.ndim == 3:
        mask = mask[:, None]
    return F.matmul(F.softmax(logits, axis=-1, mask=mask), v)


class MultiHeadAttention(Module):
    """Query/key/value/output projections around per-head attention.

    With ``relative=True`` a learnable R of shape (heads, d_head) biases
    same-instance pairs (self-attention over instance-tagged tokens only).
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: np.random.Generator,
        relative: bool = False,
        epsilon: float = 0.0,
        zero_out: bool = False,
    ):
        if dim % heads:
            raise ValueError(f"embedding size {dim} is not divisible by {heads} heads")
        self.dim = dim
        self.heads = heads
        self.d_head = dim // heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng, zero=zero_out)
        self.relative = relative
        self.epsilon = float(epsilon)
        if relative:
            self.rel = parameter(rng.normal(0.0, 1.0 / math.sqrt(self.d_head), (heads, self.d_head)))

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d_head).transpose(0, 2, 1, 3)

    def __call__(
        self,
        q_in: Tensor,
        k_in: Tensor,
        v_in: Tensor,
        key_mask: np.ndarray | None = None,
        ids_q=None,
        ids_k=None,
        epsilon: float | None = None,
    ) -> Tensor:
        q = self._split(self.q(q_in))
        k = self._split(self.k(k_in))
        v = self._split(self.v(v_in))
        if self.relative:
            eps = self.epsilon if epsilon is None else epsilon
            o = rel_instance_attention(q, k, v, ids_q, ids_k, self.rel, eps, key_mask)
        else:
            mask = None if key_mask is None else np.asarray(key_mask)[:, None, :]
            o = scaled_dot_attention(q, k, v, mask)
        b, _, n, _ = o.shape
        return self.out(o.transpose(0, 2, 1, 3).reshape(b, n, self.dim))
