"""Dataset directories: annotations text file + raster archive + task spec."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..video import ClipTensor
from .annotations import ClipRecord, load_annotations, save_annotations
from .synthetic import SyntheticTaskSpec

ANNOTATIONS = "annotations.pgar"
FRAMES = "frames.npz"
SPEC = "spec.json"


def save_dataset(out_dir, clips: list[ClipTensor], records: list[ClipRecord],
                 spec: SyntheticTaskSpec | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_annotations(records, out / ANNOTATIONS)
    arrays = {f"clip{i:06d}": c.frames for i, c in enumerate(clips)}
    np.savez(out / FRAMES, **arrays)
    if spec is not None:
        (out / SPEC).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    return out


def load_dataset(path, n_classes: int | None = None):
    """Returns (clips, records). Frames are matched to records by position."""
    root = Path(path)
    records = load_annotations(root / ANNOTATIONS, n_classes=n_classes)
    with np.load(root / FRAMES) as z:
        if len(z.files) != len(records):
            raise ValueError(f"{root}: {len(z.files)} rasters for {len(records)} annotation records")
        clips = []
        for i, rec in enumerate(records):
            frames = z[f"clip{i:06d}"]
            if frames.shape[0] != rec.T:
                raise ValueError(f"{root}: clip {rec.clip_id} has {frames.shape[0]} frames, annotations say {rec.T}")
            clips.append(ClipTensor(frames, np.asarray(rec.times, dtype=np.float64)))
    return clips, records


def load_spec(path) -> SyntheticTaskSpec:
    with open(path, encoding="utf-8") as fh:
        return SyntheticTaskSpec(**json.load(fh))
