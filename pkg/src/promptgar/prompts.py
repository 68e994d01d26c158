"""Point prompts: boxes and skeletons to pooled per-instance prompt tokens.

Layout note: feature tensors are channel-last, so pooled prompt features are
stored as (..., N, O, D) rather than D×N×O.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import F, Linear, Module, Tensor, parameter

BOX_UL, BOX_CTR, BOX_LR = 0, 1, 2
N_BOX_POINTS = 3
N_KEYPOINTS = 17
N_POINT_TYPES = N_BOX_POINTS + N_KEYPOINTS

COCO_KEYPOINTS = (
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
)


class PromptError(ValueError):
    pass


def _check_unit(name: str, *vals: float) -> None:
    for v in vals:
        if not 0.0 <= v <= 1.0:
            raise PromptError(f"{name}: coordinate {v!r} outside [0, 1]")


@dataclass(frozen=True)
class PointPrompt:
    x: float
    y: float
    t: float
    ptype: int
    instance_id: int
    visible: bool = True

    def __post_init__(self):
        _check_unit("PointPrompt", self.x, self.y, self.t)
        if not 0 <= self.ptype < N_POINT_TYPES:
            raise PromptError(f"PointPrompt: ptype {self.ptype} outside [0, {N_POINT_TYPES})")
        if self.instance_id < 0:
            raise PromptError("PointPrompt: instance_id must be nonnegative")


def box_to_points(box: Sequence[float], t: float, instance_id: int) -> list[PointPrompt]:
    """Upper-left, center and lower-right corners of a normalized (x0, y0, x1, y1) box."""
    x0, y0, x1, y1 = (float(v) for v in box)
    _check_unit("box", x0, y0, x1, y1)
    if x0 > x1 or y0 > y1:
        raise PromptError(f"box: inverted extents {(x0, y0, x1, y1)}")
    return [
        PointPrompt(x0, y0, t, BOX_UL, instance_id),
        PointPrompt((x0 + x1) / 2, (y0 + y1) / 2, t, BOX_CTR, instance_id),
        PointPrompt(x1, y1, t, BOX_LR, instance_id),
    ]


def skeleton_to_points(joints, t: float, instance_id: int) -> list[PointPrompt]:
    """17 COCO-ordered (x, y, visible) joints to point prompts of types 3..19."""
    joints = list(joints)
    if len(joints) != N_KEYPOINTS:
        raise PromptError(f"skeleton: expected {N_KEYPOINTS} joints, got {len(joints)}")
    return [
        PointPrompt(float(x), float(y), t, N_BOX_POINTS + j, instance_id, bool(v))
        for j, (x, y, v) in enumerate(joints)
    ]


class FourierBasis:
    """Frozen Gaussian projection for random Fourier features of (x, y, t)."""

    def __init__(self, matrix: np.ndarray):
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[1] != 3:
            raise ValueError(f"FourierBasis: expected (D/2, 3) matrix, got {matrix.shape}")
        self.matrix = matrix

    @classmethod
    def sample(cls, dim: int, rng: np.random.Generator) -> "FourierBasis":
        if dim % 2:
            raise ValueError(f"FourierBasis: embedding size must be even, got {dim}")
        return cls(rng.standard_normal((dim // 2, 3)))

    @property
    def dim(self) -> int:
        return 2 * self.matrix.shape[0]

    def __call__(self, v: np.ndarray) -> np.ndarray:
        return fourier_embed(v, self)


def fourier_embed(v, basis: FourierBasis) -> np.ndarray:
    """[cos(2πB(2v-1)), sin(2πB(2v-1))] for coordinates ``v`` of shape (..., 3) in [0, 1]."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != 3:
        raise PromptError(f"fourier_embed: expected (..., 3) coordinates, got {v.shape}")
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise PromptError("fourier_embed: coordinates outside [0, 1]")
    arg = (2.0 * np.pi) * ((2.0 * v - 1.0) @ basis.matrix.T)
    return np.concatenate([np.cos(arg), np.sin(arg)], axis=-1)


class TypeEmbeddingTable(Module):
    def __init__(self, dim: int, rng: np.random.Generator, scale: float = 0.1):
        self.table = parameter(rng.normal(0.0, scale, (N_POINT_TYPES, dim)))

    def __call__(self, ptypes) -> Tensor:
        return F.take(self.table, ptypes, axis=0)


def embed_points(points: Sequence[PointPrompt], basis: FourierBasis, types: TypeEmbeddingTable) -> Tensor:
    """Per-point embedding: Fourier features plus type embedding; invisible points give zeros."""
    if not points:
        return Tensor(np.zeros((0, basis.dim)))
    coords = np.array([[p.x, p.y, p.t] for p in points])
    ptypes = np.array([p.ptype for p in points])
    visible = np.array([p.visible for p in points], dtype=np.float64)[:, None]
    return (Tensor(fourier_embed(coords, basis)) + types(ptypes)) * visible


@dataclass
class PromptFeatures:
    """Pooled prompt tokens, (..., N, O, D), with per-instance ids and validity."""

    values: Tensor
    instance_ids: np.ndarray
    instance_mask: np.ndarray

    @property
    def n_instances(self) -> int:
        return self.values.shape[-3]

    @property
    def n_pooled(self) -> int:
        return self.values.shape[-2]

    def token_ids(self) -> np.ndarray:
        """Instance id for every flattened token, shape (..., N*O)."""
        return np.repeat(self.instance_ids, self.n_pooled, axis=-1)

    def token_mask(self) -> np.ndarray:
        return np.repeat(self.instance_mask, self.n_pooled, axis=-1)


class DepthwiseProjector(Module):
    """Two affine layers with GELU; the second fans the hidden vector out to O tokens."""

    def __init__(self, dim: int, n_pooled: int, rng: np.random.Generator):
        self.dim = dim
        self.n_pooled = n_pooled
        self.hidden = Linear(dim, dim, rng)
        self.heads = Linear(dim, n_pooled * dim, rng)

    def __call__(self, pooled: Tensor) -> Tensor:
        h = F.gelu(self.hidden(pooled))
        out = self.heads(h)
        return out.reshape(pooled.shape[:-1] + (self.n_pooled, self.dim))


class FlatProjector(Module):
    """Single affine map from the T×20 point axis straight to O tokens (fixed T)."""

    def __init__(self, dim: int, n_pooled: int, n_frames: int, rng: np.random.Generator):
        self.n_points = n_frames * N_POINT_TYPES
        self.weight = parameter(rng.normal(0.0, 1.0 / np.sqrt(self.n_points), (self.n_points, n_pooled)))
        self.bias = parameter(np.zeros((n_pooled, 1)))

    def __call__(self, feats: Tensor) -> Tensor:
        if feats.shape[-2] != self.n_points:
            raise PromptError(
                f"flat pooling is tied to {self.n_points} points per instance, got {feats.shape[-2]}"
            )
        ndim = feats.ndim
        axes = tuple(range(ndim - 2)) + (ndim - 1, ndim - 2)
        out = F.matmul(feats.transpose(axes), self.weight)  # (..., D, O)
        return out.transpose(axes) + self.bias


def _join(box, kpt, box_mask, kpt_mask):
    parts = [(f, m) for f, m in ((box, box_mask), (kpt, kpt_mask)) if f is not None]
    if not parts:
        return None, None
    if len(parts) == 1:
        return parts[0][0], np.asarray(parts[0][1], dtype=bool)
    (fb, mb), (fk, mk) = parts
    if fb.shape[:-2] != fk.shape[:-2]:
        raise PromptError(f"depthwise_pool: instance axes differ, {fb.shape} vs {fk.shape}")
    return F.concat([fb, fk], axis=-2), np.concatenate([mb, mk], axis=-1).astype(bool)


def depthwise_pool(
    box_feats: Tensor | None,
    kpt_feats: Tensor | None,
    projector: DepthwiseProjector,
    box_mask: np.ndarray | None = None,
    kpt_mask: np.ndarray | None = None,
) -> Tensor | None:
    """Masked mean over the (T×3 + T×17) point axis, then projection to O tokens.

    Inputs are (..., N, P, D). Returns (..., N, O, D), or None when both
    prompt families are absent.
    """
    if box_feats is not None and box_mask is None:
        box_mask = np.ones(box_feats.shape[:-1], dtype=bool)
    if kpt_feats is not None and kpt_mask is None:
        kpt_mask = np.ones(kpt_feats.shape[:-1], dtype=bool)
    feats, mask = _join(box_feats, kpt_feats, box_mask, kpt_mask)
    if feats is None:
        return None
    pooled = F.masked_mean(feats, mask, axis=feats.ndim - 2)
    return projector(pooled)


@dataclass
class PromptBatch:
    """Point prompts for a batch, padded to the largest instance count.

    coords: (B, N, P, 3) with P = T*3 box points followed by T*17 keypoints
    ptypes: (P,) point type per position
    visible: (B, N, P)
    instance_ids: (B, N) track ids, -2 on padding
    instance_mask: (B, N) real instances that carry at least one visible point
    """

    coords: np.ndarray
    ptypes: np.ndarray
    visible: np.ndarray
    instance_ids: np.ndarray
    instance_mask: np.ndarray
    n_frames: int

    @property
    def empty(self) -> bool:
        return self.coords.shape[1] == 0


class PromptEncoder(Module):
    def __init__(
        self,
        dim: int,
        n_pooled: int,
        rng: np.random.Generator,
        pooling: str = "depthwise",
        n_frames: int | None = None,
    ):
        self.basis = FourierBasis.sample(dim, rng)
        self.types = TypeEmbeddingTable(dim, rng)
        self.pooling = pooling
        if pooling == "depthwise":
            self.projector = DepthwiseProjector(dim, n_pooled, rng)
        elif pooling == "flat":
            if not n_frames:
                raise ValueError("flat pooling needs a fixed frame count")
            self.projector = FlatProjector(dim, n_pooled, n_frames, rng)
        else:
            raise ValueError(f"unknown pooling mode {pooling!r}")

    def __call__(self, batch: PromptBatch) -> PromptFeatures | None:
        if batch.empty:
            return None
        fourier = Tensor(fourier_embed(batch.coords, self.basis))
        feats = fourier + self.types(batch.ptypes)
        if self.pooling == "depthwise":
            # points are already laid out as [box (T×3); kpt (T×17)]
            values = self.projector(F.masked_mean(feats, batch.visible, axis=feats.ndim - 2))
        else:
            values = self.projector(feats * batch.visible[..., None].astype(np.float64))
        return PromptFeatures(values, batch.instance_ids, batch.instance_mask)
