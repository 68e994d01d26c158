"""Scripted flexibility protocols over one trained checkpoint.

Protocol groups and their rows:

    prompts    full, kpt-only, box-only, none
    frames     T = 4, 8, 12, 16 (same scenes re-rendered at each T)
    instances  keep 12, 10, 5, 3 actors; ``trials`` seeded draws each
    shuffle    reference order plus ``shuffle_trials`` seeded permutations
    epsilon    trained value vs 0
    head       both, class, prompts

Random protocols get one row per trial (seed logged) and a ``mean`` row.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data.degrade import DegradationSpec
from ..data.synthetic import CLASSES, ID_DEPENDENT
from ..model import PromptGAR
from .config import RunConfig
from .evaluate import Evaluator
from .metrics import MetricsReport, fmt, rows_to_csv
from .train import make_split

PROMPT_ROWS = (
    ("full", DegradationSpec()),
    ("kpt-only", DegradationSpec(drop_boxes=True)),
    ("box-only", DegradationSpec(drop_keypoints=True)),
    ("none", DegradationSpec(drop_boxes=True, drop_keypoints=True)),
)
FRAME_ROWS = (4, 8, 12, 16)
INSTANCE_ROWS = (12, 10, 5, 3)
HEAD_ROWS = ("both", "class", "prompts")


def subset_accuracy(report: MetricsReport, classes) -> float:
    """Accuracy over the clips whose true class is in ``classes``."""
    idx = list(classes)
    total = report.confusion[idx].sum()
    return float(report.confusion[idx, idx].sum() / total) if total else float("nan")


@dataclass
class FlexRow:
    protocol: str
    setting: str
    trial: str
    seed: str
    report: MetricsReport | None = None
    top1: float = float("nan")
    mean_acc: float = float("nan")
    id_dep_acc: float = float("nan")

    def as_dict(self) -> dict:
        d = {"protocol": self.protocol, "setting": self.setting, "trial": self.trial, "seed": self.seed,
             "n": str(self.report.count) if self.report else "",
             "top1": fmt(self.top1), "mean_acc": fmt(self.mean_acc), "id_dep_acc": fmt(self.id_dep_acc)}
        if self.report is not None:
            for k, r in enumerate(self.report.per_class_recall):
                d[f"recall_{k}"] = fmt(r)
        return d


def _row(protocol, setting, report, trial="-", seed="-") -> FlexRow:
    return FlexRow(protocol, str(setting), str(trial), str(seed), report, report.top1, report.mean_acc,
                   subset_accuracy(report, ID_DEPENDENT))


def _mean_row(protocol, setting, rows: list[FlexRow]) -> FlexRow:
    return FlexRow(protocol, str(setting), "mean", "-", None,
                   float(np.mean([r.top1 for r in rows])), float(np.mean([r.mean_acc for r in rows])),
                   float(np.mean([r.id_dep_acc for r in rows])))


@dataclass
class FlexReport:
    rows: list[FlexRow] = field(default_factory=list)
    elapsed: float = 0.0

    def get(self, protocol: str, setting, trial: str = "-") -> FlexRow:
        for r in self.rows:
            if r.protocol == protocol and r.setting == str(setting) and r.trial == str(trial):
                return r
        raise KeyError((protocol, setting, trial))

    def select(self, protocol: str) -> list[FlexRow]:
        return [r for r in self.rows if r.protocol == protocol]

    def to_csv(self) -> str:
        return rows_to_csv([r.as_dict() for r in self.rows])


def flexcheck(model: PromptGAR, config: RunConfig, out_dir=None, n_clips: int | None = None,
              log=None) -> FlexReport:
    log = log or (lambda msg: None)
    t0 = time.perf_counter()
    ec, tc = config.eval, config.train
    n_clips = n_clips or ec.test_clips
    report = FlexReport()
    rows = report.rows

    def evaluator(n_frames):
        clips, recs = make_split(config.task, "test", n_clips, n_frames, tc.n_instances)
        return Evaluator(model, clips, recs, ec.batch_size)

    base = evaluator(tc.n_frames)
    for name, spec in PROMPT_ROWS:
        rows.append(_row("prompts", name, base.report(spec)))
    log("prompt rows done")

    for t in FRAME_ROWS:
        ev = base if t == tc.n_frames else evaluator(t)
        rows.append(_row("frames", t, ev.report()))
    log("frame rows done")

    for k in INSTANCE_ROWS:
        if k > tc.n_instances:
            continue
        trials = []
        for trial in range(ec.trials):
            rep = base.report(DegradationSpec(keep_instances=k), seed=trial)
            trials.append(_row("instances", k, rep, trial, trial))
        rows.extend(trials)
        rows.append(_mean_row("instances", k, trials))
    log("instance rows done")

    rows.append(_row("shuffle", "reference", base.report()))
    trials = []
    for trial in range(ec.shuffle_trials):
        rep = base.report(DegradationSpec(shuffle_actor_order=trial))
        trials.append(_row("shuffle", "shuffled", rep, trial, trial))
    rows.extend(trials)
    rows.append(_mean_row("shuffle", "shuffled", trials))

    for eps in (config.model.epsilon, 0.0):
        rows.append(_row("epsilon", fmt(eps), base.report(epsilon=eps)))

    for mode in HEAD_ROWS:
        rows.append(_row("head", mode, base.report(head_mode=mode)))
    report.elapsed = time.perf_counter() - t0
    log(f"flexcheck done in {report.elapsed:.1f}s")

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "flexcheck.csv").write_text(report.to_csv())
        (out / "confusion_full.csv").write_text(report.get("prompts", "full").report.confusion_csv(CLASSES))
    return report
