"""Finite-difference verification of the autodiff rules and of a whole model.

Two layers of checks:

* per op: each registered backward rule is called directly with a random
  upstream gradient and compared against central differences of
  ``sum(op(x) * g)``, so a broken rule is named even when other rules are fine;
* per parameter: the tiny model's loss is differentiated by the tape and by
  central differences for every named parameter (all entries of small
  tensors, a seeded sample of large ones).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..data.synthetic import generate_dataset
from ..model import PromptGAR, collate
from ..nn import RULES, F, Tensor, backward, fd_gradient, no_grad, relative_error
from .config import RunConfig, tiny_config
from .train import head_grad_identity

TOLERANCE = 1e-4
FD_STEP = 1e-5


def _op_cases(rng: np.random.Generator) -> dict[str, list]:
    """op name -> list of (fn(*tensors) -> Tensor, [input arrays])."""
    r = lambda *s: rng.standard_normal(s)  # noqa: E731
    pos = lambda *s: rng.uniform(0.5, 2.0, s)  # noqa: E731
    mask = rng.random((3, 5)) > 0.3
    mask[:, 0] = True
    mm_mask = np.array([[True, False, True, True], [False, False, False, False]])
    labels = np.array([1, 4, 0])
    return {
        "add": [(F.add, [r(3, 4), r(4)])],
        "sub": [(F.sub, [r(3, 4), r(3, 1)])],
        "mul": [(F.mul, [r(2, 3, 4), r(3, 1)])],
        "div": [(F.div, [r(3, 4), pos(3, 4)])],
        "neg": [(F.neg, [r(3, 4)])],
        "exp": [(F.exp, [r(3, 4)])],
        "log": [(F.log, [pos(3, 4)])],
        "gelu": [(F.gelu, [r(3, 4) * 2])],
        "matmul": [(F.matmul, [r(2, 3, 4), r(4, 5)]), (F.matmul, [r(2, 3, 4), r(2, 4, 2)])],
        "sum": [(lambda a: F.sum(a, axis=1), [r(3, 4, 2)])],
        "mean": [(lambda a: F.mean(a, axis=0, keepdims=True), [r(3, 4)])],
        "reshape": [(lambda a: F.reshape(a, (4, 3)), [r(3, 4)])],
        "transpose": [(lambda a: F.transpose(a, (1, 0, 2)), [r(2, 3, 4)])],
        "concat": [(lambda a, b: F.concat([a, b], axis=1), [r(2, 3), r(2, 2)])],
        "index": [(lambda a: F.index(a, (slice(None), slice(1, 3))), [r(3, 4)]),
                  (lambda a: F.index(a, np.array([0, 2, 2])), [r(3, 4)])],
        "take": [(lambda a: F.take(a, np.array([0, 2, 2, 1]), axis=0), [r(3, 4)])],
        "expand": [(lambda a: F.expand(a, (3, 2, 4)), [r(1, 4)])],
        "softmax": [(lambda a: F.softmax(a, axis=-1, mask=mask), [r(3, 5)])],
        "layer_norm": [(F.layer_norm, [r(3, 6), r(6), r(6)])],
        "cross_entropy": [(lambda a: F.cross_entropy(a, labels), [r(3, 5)])],
        "masked_mean": [(lambda a: F.masked_mean(a, mm_mask, axis=1), [r(2, 4, 3)])],
    }


def check_op(name: str, fn, arrays, rng: np.random.Generator) -> float:
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*leaves)
    if out.node is None or out.node.op != name:
        raise AssertionError(f"op case for {name!r} produced {out.node.op if out.node else None!r}")
    g = rng.standard_normal(out.shape)
    analytic = RULES[name](out.node.ctx, out.node.inputs, g)
    worst = 0.0
    for i, arr in enumerate(arrays):
        def f(x, i=i):
            args = [Tensor(a) for a in arrays]
            args[i] = Tensor(x)
            with no_grad():
                return float((fn(*args).data * g).sum())

        numeric = fd_gradient(f, arr, step=FD_STEP)
        a_grad = analytic[i] if analytic[i] is not None else np.zeros_like(arr)
        if np.shape(a_grad) != arr.shape:
            return float("inf")
        worst = max(worst, relative_error(a_grad, numeric))
    return worst


def _tiny_batch(config: RunConfig):
    # two clips with different actor counts so padding and masks are exercised
    task = config.task
    clips, recs = generate_dataset(task, [11, 12], n_frames=config.train.n_frames)
    if recs[0].n_instances == recs[1].n_instances and recs[0].n_instances > 1:
        recs[1].instances = recs[1].instances[:-1]
    return collate(clips, recs)


def _group(name: str) -> str:
    return name.rsplit(".", 1)[0] if "." in name else name


@dataclass
class GradcheckReport:
    op_errors: dict = field(default_factory=dict)
    group_errors: dict = field(default_factory=dict)
    param_errors: dict = field(default_factory=dict)
    entries_checked: int = 0
    head_identity: bool = False
    elapsed: float = 0.0
    tolerance: float = TOLERANCE

    @property
    def failing_ops(self) -> list[str]:
        return sorted(k for k, v in self.op_errors.items() if not v < self.tolerance)

    @property
    def failing_groups(self) -> list[str]:
        return sorted(k for k, v in self.group_errors.items() if not v < self.tolerance)

    @property
    def passed(self) -> bool:
        return not self.failing_ops and not self.failing_groups and self.head_identity

    def to_text(self) -> str:
        lines = ["op                    max_rel_err"]
        lines += [f"{k:<21} {v:.3e}" for k, v in sorted(self.op_errors.items())]
        lines += ["", "parameter group                          max_rel_err"]
        lines += [f"{k:<40} {v:.3e}" for k, v in sorted(self.group_errors.items())]
        lines += ["", f"entries checked: {self.entries_checked}",
                  f"head gradient identity: {'yes' if self.head_identity else 'NO'}",
                  f"elapsed: {self.elapsed:.1f}s"]
        if self.failing_ops:
            lines.append("FAILING OPS: " + ", ".join(self.failing_ops))
        if self.failing_groups:
            lines.append("FAILING GROUPS: " + ", ".join(self.failing_groups))
        lines.append("PASS" if self.passed else "FAIL")
        return "\n".join(lines)


def gradcheck(config: RunConfig | None = None, max_entries: int = 12, seed: int = 0) -> GradcheckReport:
    config = config or tiny_config()
    if config.model.dim > 16:
        raise ValueError("gradcheck expects a tiny config (model.dim <= 16)")
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    rep = GradcheckReport()

    for name, cases in _op_cases(rng).items():
        rep.op_errors[name] = max(check_op(name, fn, arrays, rng) for fn, arrays in cases)
    for name in RULES:
        rep.op_errors.setdefault(name, float("nan"))

    model = PromptGAR(config.model, seed=config.train.seed)
    # move every parameter off its init so zero-initialized pieces carry gradient
    for p in model.parameters().values():
        p.data = p.data + 0.05 * rng.standard_normal(p.shape)
    batch = _tiny_batch(config)

    out = model(batch, probe=True)
    loss = F.cross_entropy(out.logits, batch.labels)
    model.zero_grad()
    backward(loss)
    rep.head_identity = head_grad_identity(out) and out.head.prompt_mean is not None

    # structurally zero gradients (e.g. key biases under softmax) are judged
    # against the model-wide gradient scale instead of their own roundoff
    ref = max(float(np.abs(p.grad).max()) for p in model.parameters().values() if p.grad is not None)
    for name, p in model.parameters().items():
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        size = p.data.size
        idx = np.arange(size) if size <= max_entries else np.sort(rng.choice(size, max_entries, replace=False))
        base = p.data

        def f(x, p=p):
            p.data = x
            with no_grad():
                return float(F.cross_entropy(model(batch).logits, batch.labels).data)

        numeric = fd_gradient(f, base, step=FD_STEP, indices=idx)
        p.data = base
        err = relative_error(analytic.reshape(-1)[idx], numeric.reshape(-1)[idx], scale=ref)
        rep.param_errors[name] = err
        g = _group(name)
        rep.group_errors[g] = max(rep.group_errors.get(g, 0.0), err)
        rep.entries_checked += len(idx)
    rep.elapsed = time.perf_counter() - t0
    return rep
