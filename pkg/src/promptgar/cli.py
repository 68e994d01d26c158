"""Command-line entry point: train, eval, flexcheck, gradcheck, gen."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .data.degrade import DegradationSpec
from .data.io import load_dataset, load_spec, save_dataset
from .data.synthetic import CLASSES, SyntheticTaskSpec, generate_dataset
from .decoder import HEAD_MODES


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _load_config(path):
    from .harness.config import RunConfig, load_config

    return load_config(path) if path else RunConfig()


def cmd_train(args) -> int:
    from .harness.checkpoint import save_checkpoint
    from .harness.train import train

    config = _load_config(args.config)
    result = train(config, log=_log)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out, result.checkpoint)
    stem = out.with_suffix("")
    Path(f"{stem}.loss.csv").write_text(result.loss_csv())
    Path(f"{stem}.val.csv").write_text(result.val_csv())
    _log(f"saved {out} (best step {result.best_step}, {result.elapsed:.1f}s)")
    return 0


def _degradation(args) -> DegradationSpec:
    keep = args.keep_instances
    if keep is not None:
        keep = float(keep) if "." in keep else int(keep)
    if args.frames is not None and args.stride is not None:
        raise SystemExit("use either --frames or --stride, not both")
    return DegradationSpec(
        drop_boxes=args.drop_boxes,
        drop_keypoints=args.drop_kpts,
        keep_instances=keep,
        frame_count=args.frames,
        frame_stride=args.stride,
        shuffle_actor_order=args.shuffle_seed,
        id_switch_rate=args.id_switch_rate,
    )


def cmd_eval(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.evaluate import evaluate

    ckpt = load_checkpoint(args.ckpt)
    model = ckpt.build_model()
    clips, records = load_dataset(args.data)
    report = evaluate(model, clips, records, _degradation(args), args.head_mode,
                      epsilon=args.epsilon, seed=args.seed, batch_size=ckpt.config.eval.batch_size)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.csv").write_text(report.metrics_csv())
        (out / "confusion.csv").write_text(report.confusion_csv(CLASSES[: model.config.n_classes]))
    sys.stdout.write(report.metrics_csv())
    return 0


def cmd_flexcheck(args) -> int:
    from .harness.checkpoint import load_checkpoint
    from .harness.flexcheck import flexcheck

    ckpt = load_checkpoint(args.ckpt)
    report = flexcheck(ckpt.build_model(), ckpt.config, out_dir=args.out, n_clips=args.n, log=_log)
    sys.stdout.write(report.to_csv())
    return 0


def cmd_gradcheck(args) -> int:
    from .harness.config import tiny_config
    from .harness.gradcheck import gradcheck

    config = _load_config(args.config) if args.config else tiny_config()
    report = gradcheck(config)
    print(report.to_text())
    return 0 if report.passed else 1


def cmd_gen(args) -> int:
    if args.spec:
        spec = load_spec(args.spec) if str(args.spec).endswith(".json") else _load_config(args.spec).task
    else:
        spec = SyntheticTaskSpec()
    seeds = range(args.first_seed, args.first_seed + args.n)
    clips, records = generate_dataset(spec, seeds, n_frames=args.frames, n_instances=args.instances)
    out = save_dataset(args.out, clips, records, spec)
    _log(f"wrote {args.n} clips to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="promptgar", description="Prompt-conditioned group activity recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a config file")
    t.add_argument("--config", help="INI config (defaults used when omitted)")
    t.add_argument("--out", required=True, help="checkpoint path; loss/val CSVs are written next to it")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="directory written by `gen`")
    e.add_argument("--drop-boxes", action="store_true")
    e.add_argument("--drop-kpts", action="store_true")
    e.add_argument("--keep-instances", help="count (int) or fraction (float)")
    e.add_argument("--frames", type=int, help="uniformly subsample to N frames")
    e.add_argument("--stride", type=int, help="keep every S-th frame")
    e.add_argument("--shuffle-seed", type=int)
    e.add_argument("--id-switch-rate", type=float, default=0.0)
    e.add_argument("--head-mode", default="both", choices=HEAD_MODES)
    e.add_argument("--epsilon", type=float, help="override the relative-attention scale")
    e.add_argument("--seed", type=int, default=0, help="seed for random degradations")
    e.add_argument("--out", help="directory for metrics.csv and confusion.csv")
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("flexcheck", help="run every flexibility protocol on a checkpoint")
    f.add_argument("--ckpt", required=True)
    f.add_argument("--out", required=True)
    f.add_argument("--n", type=int, help="test clips (default: eval.test_clips from the config)")
    f.set_defaults(func=cmd_flexcheck)

    g = sub.add_parser("gradcheck", help="finite-difference check of every op and parameter")
    g.add_argument("--config", help="tiny INI config (built-in tiny config when omitted)")
    g.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("gen", help="write a synthetic dataset directory")
    s.add_argument("--spec", help="task spec (.json) or INI config with a [task] section")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, help="pin the frame count")
    s.add_argument("--instances", type=int, help="pin the actor count")
    s.add_argument("--first-seed", type=int, default=2_000_000)
    s.set_defaults(func=cmd_gen)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as e:
        _log(f"error: {e}")
        return 2


if __name__ == "__main__":
    sys.exit(main())
