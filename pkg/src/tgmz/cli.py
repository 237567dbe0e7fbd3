"""Command line entry point: ``tgmz <command> ...``."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import parse_config, parse_config_text
from .data import fuse_datasets, load_dataset, make_synthetic, save_dataset
from .errors import ConfigError, TGMZError
from .evaluation import SETTINGS


def _gen_data(args):
    cfg_text = Path(args.spec).read_text()
    # a spec file is any config holding a [synthetic] section; data.path is not needed
    if "[data]" not in cfg_text:
        cfg_text += "\n[data]\n"
    try:
        cfg = parse_config_text(cfg_text, args.spec)
    except ConfigError as e:
        raise ConfigError(f"{args.spec}: needs a [synthetic] section ({e})") from None
    d = make_synthetic(cfg.synthetic)
    save_dataset(d, args.out)
    print(f"wrote {d.n} rows, {d.n_classes} classes, d_x={d.d_x}, d_a={d.d_a} to {args.out}")


def _fuse(args):
    d = fuse_datasets([load_dataset(p) for p in args.inputs], args.name)
    save_dataset(d, args.out)
    for s in d.sources:
        print(f"{s.name}: classes {s.class_offset}..{s.class_offset + s.n_classes - 1}, d_a {s.d_a}")
    print(f"fused: {d.n_classes} classes ({len(d.split.seen)} seen / {len(d.split.unseen)} unseen), "
          f"d_a={d.d_a}")


def _train(args):
    from .runner import run_train

    cfg = parse_config(args.config)
    res = run_train(cfg, args.out)
    print(f"trained {res.state.episode} episodes; checkpoint {res.checkpoint}; log {res.log}")


def _eval(args):
    from .runner import run_evaluate

    cfg = parse_config(args.config)
    rep = run_evaluate(cfg, args.checkpoint, args.setting, args.export_projection, args.out)
    print("\n".join(rep.lines()))


def _check(args):
    from .runner import check_checkpoint

    rep = check_checkpoint(args.checkpoint)
    print(f"{args.checkpoint}: {rep.n_tensors} tensors, round-trip {'ok' if rep.passed else 'FAILED'}")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tgmz", description="Task-aligned generative zero-shot learning.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", help="write a synthetic dataset directory")
    s.add_argument("spec", help="config file with a [synthetic] section")
    s.add_argument("out")
    s.set_defaults(func=_gen_data)

    s = sub.add_parser("fuse", help="fuse dataset directories into one")
    s.add_argument("inputs", nargs="+")
    s.add_argument("out")
    s.add_argument("--name", default=None)
    s.set_defaults(func=_fuse)

    s = sub.add_parser("train", help="train from a config file")
    s.add_argument("config")
    s.add_argument("--out", default=None, help="output directory (default: run.out)")
    s.set_defaults(func=_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("config")
    s.add_argument("checkpoint")
    s.add_argument("--setting", choices=SETTINGS, default="zsl")
    s.add_argument("--export-projection", action="store_true")
    s.add_argument("--out", default=None)
    s.set_defaults(func=_eval)

    s = sub.add_parser("check", help="verify a checkpoint file round-trips")
    s.add_argument("checkpoint")
    s.set_defaults(func=_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "fuse" and len(args.inputs) < 2:
        print("tgmz fuse: need at least two input datasets and an output", file=sys.stderr)
        return 2
    try:
        return args.func(args) or 0
    except (TGMZError, OSError) as e:
        print(f"tgmz {args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
