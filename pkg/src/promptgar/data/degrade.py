"""Annotation degradations used by the flexibility protocols.

Stages always run in this order:
frame subsample -> instance deletion -> prompt-family drop -> id relabel ->
actor shuffle -> id-switch noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..video import ClipTensor
from .annotations import ClipRecord


class DegradationError(ValueError):
    pass


@dataclass(frozen=True)
class DegradationSpec:
    drop_boxes: bool = False
    drop_keypoints: bool = False
    keep_instances: int | float | None = None  # count (int) or fraction (float)
    frame_stride: int | None = None
    frame_count: int | None = None
    shuffle_actor_order: int | None = None  # shuffle seed
    relabel_ids: tuple | None = None  # ((old, new), ...) bijection
    id_switch_rate: float = 0.0

    def __post_init__(self):
        if self.frame_stride is not None and self.frame_count is not None:
            raise DegradationError("at most one frame subsampling mode may be active")
        if self.frame_stride is not None and self.frame_stride < 1:
            raise DegradationError("frame stride must be >= 1")
        if self.frame_count is not None and self.frame_count < 1:
            raise DegradationError("frame count must be >= 1")
        if not 0.0 <= self.id_switch_rate <= 1.0:
            raise DegradationError("id switch rate must be a probability")
        if self.keep_instances is not None and self.keep_instances <= 0 and not self.drops_all_prompts:
            raise DegradationError("keep_instances must be >= 1 unless all prompts are dropped")

    @property
    def drops_all_prompts(self) -> bool:
        return self.drop_boxes and self.drop_keypoints

    @property
    def is_identity(self) -> bool:
        return self == DegradationSpec()


def frame_indices(n_frames: int, spec: DegradationSpec) -> np.ndarray:
    if spec.frame_stride is not None:
        return np.arange(0, n_frames, spec.frame_stride)
    if spec.frame_count is not None:
        if spec.frame_count > n_frames:
            raise DegradationError(f"cannot sample {spec.frame_count} frames from {n_frames}")
        if spec.frame_count == 1:
            return np.array([n_frames // 2])
        # round half up keeps the picks distinct when the step is >= 1
        return np.floor(np.linspace(0, n_frames - 1, spec.frame_count) + 0.5).astype(int)
    return np.arange(n_frames)


def _stage_rng(seed: int, stage: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stage])


def degrade(record: ClipRecord, spec: DegradationSpec, seed: int = 0) -> ClipRecord:
    """Apply ``spec`` to a copy of ``record``; deterministic given ``seed``."""
    rec = record.copy()
    if spec.is_identity:
        return rec

    if spec.frame_stride is not None or spec.frame_count is not None:
        idx = frame_indices(rec.T, spec)
        rec.times = [rec.times[i] for i in idx]
        for inst in rec.instances:
            inst.boxes = [inst.boxes[i] for i in idx]
            inst.skeletons = [inst.skeletons[i] for i in idx]
        rec.T = len(idx)

    if spec.keep_instances is not None:
        n = rec.n_instances
        k = spec.keep_instances
        if isinstance(k, float):
            k = max(1, int(round(k * n))) if n else 0
        if k > n:
            raise DegradationError(f"clip {rec.clip_id}: cannot keep {k} of {n} instances")
        keep = np.sort(_stage_rng(seed, 1).choice(n, size=k, replace=False)) if n else []
        rec.instances = [rec.instances[i] for i in keep]

    if spec.drop_boxes:
        for inst in rec.instances:
            inst.boxes = [None] * rec.T
    if spec.drop_keypoints:
        for inst in rec.instances:
            inst.skeletons = [None] * rec.T

    if spec.relabel_ids is not None:
        mapping = dict(spec.relabel_ids)
        present = [inst.track_id for inst in rec.instances]
        new = [mapping.get(t, t) for t in present]
        if len(set(new)) != len(new):
            raise DegradationError(f"clip {rec.clip_id}: relabeling is not a bijection on present ids")
        for inst, t in zip(rec.instances, new):
            inst.track_id = int(t)

    if spec.shuffle_actor_order is not None:
        perm = np.random.default_rng(int(spec.shuffle_actor_order)).permutation(rec.n_instances)
        rec.instances = [rec.instances[i] for i in perm]

    if spec.id_switch_rate > 0 and rec.n_instances >= 2:
        rng = _stage_rng(seed, 2)
        for f in range(1, rec.T):
            if rng.random() < spec.id_switch_rate:
                a, b = rng.choice(rec.n_instances, size=2, replace=False)
                ia, ib = rec.instances[a], rec.instances[b]
                ia.boxes[f:], ib.boxes[f:] = ib.boxes[f:], ia.boxes[f:]
                ia.skeletons[f:], ib.skeletons[f:] = ib.skeletons[f:], ia.skeletons[f:]
    return rec


def degrade_clip(clip: ClipTensor, spec: DegradationSpec) -> ClipTensor:
    """Frame subsampling on the raster side; the other stages only touch annotations."""
    if spec.frame_stride is None and spec.frame_count is None:
        return clip
    idx = frame_indices(clip.n_frames, spec)
    return ClipTensor(clip.frames[idx], clip.times[idx])


def random_bijection(ids, seed: int, pool: int = 1000) -> tuple:
    rng = np.random.default_rng(seed)
    ids = list(ids)
    targets = rng.choice(pool, size=len(ids), replace=False)
    return tuple((int(a), int(b)) for a, b in zip(ids, targets))
