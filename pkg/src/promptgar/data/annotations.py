"""Per-clip annotation records and their line-delimited text format.

File layout: a header line ``#promptgar-ann v1`` followed by one JSON object
per clip with keys in a fixed order. Floats are written with Python's
shortest round-trip repr, so save -> load is bit exact.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterable

HEADER = "#promptgar-ann v1"
N_JOINTS = 17

Box = list  # [x0, y0, x1, y1]
Skeleton = list  # 17 x [x, y, visible]


class AnnotationError(ValueError):
    pass


@dataclass
class Instance:
    track_id: int
    boxes: list  # per frame: Box or None
    skeletons: list  # per frame: Skeleton or None

    def copy(self) -> "Instance":
        return Instance(
            self.track_id,
            [None if b is None else list(b) for b in self.boxes],
            [None if s is None else [list(j) for j in s] for s in self.skeletons],
        )


@dataclass
class ClipRecord:
    clip_id: str
    T: int
    H: int
    W: int
    label: int
    times: list
    instances: list = field(default_factory=list)

    @property
    def n_instances(self) -> int:
        return len(self.instances)

    def copy(self) -> "ClipRecord":
        return ClipRecord(self.clip_id, self.T, self.H, self.W, self.label, list(self.times),
                          [inst.copy() for inst in self.instances])

    def validate(self, n_classes: int | None = None) -> None:
        cid = self.clip_id
        if self.T < 1 or self.H < 1 or self.W < 1:
            raise AnnotationError(f"clip {cid}: non-positive extents T={self.T} H={self.H} W={self.W}")
        if not isinstance(self.label, int) or self.label < 0 or (n_classes is not None and self.label >= n_classes):
            raise AnnotationError(f"clip {cid}: label {self.label!r} out of range")
        if len(self.times) != self.T:
            raise AnnotationError(f"clip {cid}: {len(self.times)} timestamps for T={self.T}")
        _unit(cid, "time", self.times)
        seen = set()
        for inst in self.instances:
            if inst.track_id in seen:
                raise AnnotationError(f"clip {cid}: duplicate track id {inst.track_id}")
            seen.add(inst.track_id)
            if len(inst.boxes) != self.T or len(inst.skeletons) != self.T:
                raise AnnotationError(f"clip {cid}: track {inst.track_id} does not cover T={self.T} frames")
            for box in inst.boxes:
                if box is None:
                    continue
                if len(box) != 4:
                    raise AnnotationError(f"clip {cid}: track {inst.track_id} box needs 4 values")
                _unit(cid, "box", box)
                if box[0] > box[2] or box[1] > box[3]:
                    raise AnnotationError(f"clip {cid}: track {inst.track_id} inverted box {box}")
            for skel in inst.skeletons:
                if skel is None:
                    continue
                if len(skel) != N_JOINTS or any(len(j) != 3 for j in skel):
                    raise AnnotationError(f"clip {cid}: track {inst.track_id} skeleton must be 17 x (x, y, v)")
                _unit(cid, "keypoint", [c for j in skel for c in j[:2]])


def _unit(cid, what, values: Iterable[float]) -> None:
    for v in values:
        if not 0.0 <= v <= 1.0:
            raise AnnotationError(f"clip {cid}: {what} coordinate {v!r} outside [0, 1]")


def record_to_dict(rec: ClipRecord) -> dict:
    return {
        "clip_id": rec.clip_id,
        "T": rec.T,
        "H": rec.H,
        "W": rec.W,
        "label": rec.label,
        "times": rec.times,
        "instances": [
            {"track_id": inst.track_id, "boxes": inst.boxes, "skeletons": inst.skeletons}
            for inst in rec.instances
        ],
    }


def record_from_dict(d: dict) -> ClipRecord:
    cid = d.get("clip_id", "<unknown>")
    try:
        rec = ClipRecord(
            clip_id=str(d["clip_id"]),
            T=int(d["T"]),
            H=int(d["H"]),
            W=int(d["W"]),
            label=d["label"],
            times=[float(t) for t in d["times"]],
            instances=[
                Instance(
                    int(i["track_id"]),
                    [None if b is None else [float(v) for v in b] for b in i["boxes"]],
                    [None if s is None else [[float(j[0]), float(j[1]), int(j[2])] for j in s] for s in i["skeletons"]],
                )
                for i in d["instances"]
            ],
        )
    except (KeyError, TypeError, ValueError, IndexError) as e:
        raise AnnotationError(f"clip {cid}: malformed record ({type(e).__name__}: {e})") from None
    return rec


def dumps_record(rec: ClipRecord) -> str:
    return json.dumps(record_to_dict(rec), separators=(",", ":"), allow_nan=False)


def save_annotations(records: Iterable[ClipRecord], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(HEADER + "\n")
        for rec in records:
            rec.validate()
            fh.write(dumps_record(rec) + "\n")


def load_annotations(path: str | os.PathLike, n_classes: int | None = None) -> list[ClipRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != HEADER:
            raise AnnotationError(f"{path}:1: expected header {HEADER!r}, got {header!r}")
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as e:
                raise AnnotationError(f"{path}:{lineno}: unparseable record ({e.msg})") from None
            if not isinstance(d, dict):
                raise AnnotationError(f"{path}:{lineno}: record must be an object")
            try:
                rec = record_from_dict(d)
                rec.validate(n_classes)
            except AnnotationError as e:
                raise AnnotationError(f"{path}:{lineno}: {e}") from None
            records.append(rec)
    return records
