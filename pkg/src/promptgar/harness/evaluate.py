"""Forward a dataset through a model under a degradation and score it."""

from __future__ import annotations

import numpy as np

from ..data.annotations import ClipRecord
from ..data.degrade import DegradationSpec, degrade, degrade_clip
from ..decoder import normalize_mode
from ..model import PromptGAR, collate, prompt_batch
from ..nn import no_grad
from ..video import ClipTensor
from .metrics import MetricsReport


def clip_seed(trial_seed: int, index: int) -> int:
    """Per-clip degradation seed, derived from the protocol trial seed."""
    return int(trial_seed) * 1_000_003 + int(index)


def _chunks(ts: list[int], batch_size: int):
    """Consecutive index runs of at most ``batch_size`` with equal frame count."""
    start = 0
    while start < len(ts):
        stop = start + 1
        while stop < len(ts) and stop - start < batch_size and ts[stop] == ts[start]:
            stop += 1
        yield start, stop
        start = stop


class Evaluator:
    """Evaluates one fixed model on one dataset.

    Video tokens depend only on the frames, so they are cached per frame
    selection and reused across protocols that only change the prompts. The
    model's weights must not change while an Evaluator is alive.
    """

    def __init__(self, model: PromptGAR, clips: list[ClipTensor], records: list[ClipRecord], batch_size: int = 32):
        if len(clips) != len(records):
            raise ValueError("clips and records differ in length")
        k = model.config.n_classes
        bad = [r.clip_id for r in records if not 0 <= r.label < k]
        if bad:
            raise ValueError(f"dataset labels exceed the model's {k} classes (e.g. clip {bad[0]})")
        self.model = model
        self.clips = clips
        self.records = records
        self.batch_size = batch_size
        self._video = {}

    @property
    def labels(self) -> np.ndarray:
        return np.array([r.label for r in self.records], dtype=np.int64)

    def _frames(self, spec: DegradationSpec):
        key = (spec.frame_stride, spec.frame_count)
        if key not in self._video:
            clips = [degrade_clip(c, spec) for c in self.clips]
            ts = [c.n_frames for c in clips]
            entries = []
            with no_grad():
                for a, b in _chunks(ts, self.batch_size):
                    frames = np.stack([c.frames for c in clips[a:b]])
                    times = np.stack([c.times for c in clips[a:b]])
                    entries.append((a, b, self.model.video(frames, times)))
            self._video[key] = entries
        return self._video[key]

    def degraded_records(self, spec: DegradationSpec, seed: int = 0) -> list[ClipRecord]:
        return [degrade(r, spec, seed=clip_seed(seed, i)) for i, r in enumerate(self.records)]

    def logits(self, spec: DegradationSpec = DegradationSpec(), head_mode: str = "both",
               epsilon: float | None = None, seed: int = 0) -> np.ndarray:
        head_mode = normalize_mode(head_mode)
        recs = self.degraded_records(spec, seed)
        out = []
        with no_grad():
            for a, b, vt in self._frames(spec):
                res = self.model.decode(vt, prompt_batch(recs[a:b]), head_mode, epsilon)
                out.append(res.logits.data)
        return np.concatenate(out, axis=0)

    def report(self, spec: DegradationSpec = DegradationSpec(), head_mode: str = "both",
               epsilon: float | None = None, seed: int = 0) -> MetricsReport:
        logits = self.logits(spec, head_mode, epsilon, seed)
        return MetricsReport.from_logits(logits, self.labels, self.model.config.n_classes)


def evaluate(model: PromptGAR, clips, records, degradation: DegradationSpec = DegradationSpec(),
             head_mode: str = "both", epsilon: float | None = None, seed: int = 0,
             batch_size: int = 32) -> MetricsReport:
    return Evaluator(model, clips, records, batch_size).report(degradation, head_mode, epsilon, seed)


def forward_logits(model: PromptGAR, clips, records, head_mode: str = "both", epsilon: float | None = None,
                   batch_size: int = 32) -> np.ndarray:
    """Uncached reference path: full forward on collated batches."""
    out = []
    ts = [c.n_frames for c in clips]
    with no_grad():
        for a, b in _chunks(ts, batch_size):
            out.append(model(collate(clips[a:b], records[a:b]), head_mode, epsilon).logits.data)
    return np.concatenate(out, axis=0)
