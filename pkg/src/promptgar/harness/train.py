"""Training loop: AdamW + cosine schedule, validation-based checkpoint selection."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..data.synthetic import SyntheticTaskSpec, generate_dataset
from ..model import PromptGAR, collate
from ..nn import AdamW, F, backward, clip_grad_norm, cosine_lr
from .checkpoint import Checkpoint
from .config import RunConfig
from .evaluate import Evaluator
from .metrics import fmt, rows_to_csv

# disjoint seed ranges for the three splits of the synthetic task
TRAIN_OFFSET = 0
VAL_OFFSET = 1_000_000
TEST_OFFSET = 2_000_000


class TrainingError(RuntimeError):
    def __init__(self, step: int, message: str):
        super().__init__(f"step {step}: {message}")
        self.step = step


def split_seeds(split: str, count: int) -> np.ndarray:
    offset = {"train": TRAIN_OFFSET, "val": VAL_OFFSET, "test": TEST_OFFSET}[split]
    return np.arange(offset, offset + count)


def make_split(task: SyntheticTaskSpec, split: str, count: int, n_frames: int, n_instances: int | None):
    return generate_dataset(task, split_seeds(split, count), n_frames=n_frames, n_instances=n_instances)


@dataclass
class TrainResult:
    model: PromptGAR
    checkpoint: Checkpoint
    losses: list = field(default_factory=list)  # (step, lr, loss)
    validation: list = field(default_factory=list)  # (step, top1)
    best_step: int = -1
    elapsed: float = 0.0

    def loss_csv(self) -> str:
        return rows_to_csv([{"step": str(s), "lr": fmt(lr), "loss": fmt(l)} for s, lr, l in self.losses])

    def val_csv(self) -> str:
        return rows_to_csv([{"step": str(s), "val_top1": fmt(a)} for s, a in self.validation])


def head_grad_identity(out) -> bool:
    """Both head inputs must have received the same gradient, elementwise and exactly."""
    x, m = out.head.class_input, out.head.prompt_mean
    if x is None or m is None:
        return True
    return x.grad is not None and m.grad is not None and np.array_equal(x.grad, m.grad)


def train(config: RunConfig, log: Callable[[str], None] | None = None,
          step_hook: Callable | None = None) -> TrainResult:
    """Train from scratch; deterministic given ``config.train.seed``.

    ``step_hook(step, model, out, loss)`` runs after each backward pass, before
    the optimizer update. With ``train.check_head_identity`` the head inputs
    keep their gradients and every step is checked.
    """
    tc = config.train
    log = log or (lambda msg: None)
    t0 = time.perf_counter()
    model = PromptGAR(config.model, seed=tc.seed)
    train_clips, train_recs = make_split(config.task, "train", tc.train_clips, tc.n_frames, tc.n_instances)
    val = Evaluator(model, *make_split(config.task, "val", tc.val_clips, tc.n_frames, tc.n_instances),
                    batch_size=config.eval.batch_size)
    log(f"data ready: {tc.train_clips} train / {tc.val_clips} val clips ({time.perf_counter() - t0:.1f}s)")

    params = model.parameters()
    opt = AdamW(params, lr=tc.lr, weight_decay=tc.weight_decay)
    order_rng = np.random.default_rng([tc.seed, 7])
    order = order_rng.permutation(tc.train_clips)
    cursor = 0
    result = TrainResult(model, None)
    best = (-1.0, -1, None)

    for step in range(tc.steps):
        if cursor + tc.batch_size > len(order):
            order = order_rng.permutation(tc.train_clips)
            cursor = 0
        idx = order[cursor:cursor + tc.batch_size]
        cursor += tc.batch_size
        batch = collate([train_clips[i] for i in idx], [train_recs[i] for i in idx])
        lr = cosine_lr(step, tc.steps, tc.lr, warmup=tc.warmup, min_lr=tc.min_lr)
        try:
            out = model(batch, probe=tc.check_head_identity)
            loss = F.cross_entropy(out.logits, batch.labels)
        except FloatingPointError as e:
            raise TrainingError(step, f"non-finite value in forward pass ({e})") from None
        if not np.isfinite(loss.data):
            raise TrainingError(step, f"loss is {loss.data}")
        model.zero_grad()
        backward(loss)
        if tc.check_head_identity and not head_grad_identity(out):
            raise TrainingError(step, "head inputs received different gradients")
        if step_hook is not None:
            step_hook(step, model, out, loss)
        if tc.grad_clip > 0:
            clip_grad_norm(params, tc.grad_clip)
        opt.lr = lr
        opt.step()
        result.losses.append((step, lr, float(loss.data)))
        done = step + 1
        if done % tc.val_every == 0 or done == tc.steps:
            val.model = model
            val._video.clear()
            acc = val.report().top1
            result.validation.append((done, acc))
            if acc > best[0]:
                best = (acc, done, model.state_dict())
            log(f"step {done}/{tc.steps} loss {loss.data:.4f} val_top1 {acc:.4f}")

    model.load_state_dict(best[2])
    result.best_step = best[1]
    result.elapsed = time.perf_counter() - t0
    meta = {
        "model_seed": tc.seed,
        "best_step": best[1],
        "val_top1": best[0],
        "split_offsets": {"train": TRAIN_OFFSET, "val": VAL_OFFSET, "test": TEST_OFFSET},
        "rng_state": order_rng.bit_generator.state,
    }
    result.checkpoint = Checkpoint.from_model(model, config, meta)
    return result
