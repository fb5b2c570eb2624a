"""Command line: ``gdpl <subcommand> [flags]``.

Exit codes: 0 success, 1 validation error (bad flag, bad value, failed
check), 2 I/O error (missing or corrupt files, unwritable output).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ..checkpoint import CheckpointError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _episode_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--depth", type=int, default=3, help="prompt depth k")
    p.add_argument("--pattern", default="[a,b,*,*]", help="quaternion slot pattern, e.g. [a,*,b,*]")
    p.add_argument("--no-lora", action="store_true", help="disable the cross-modal low-rank adapters")
    p.add_argument("--no-quat", action="store_true", help="replace quaternion layers by a plain sum")
    p.add_argument("--domain-encoder", choices=("random", "mae"), default="mae")
    p.add_argument("--base", type=Path, default=None, help="directory of frozen base checkpoints (from `pretrain`)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gdpl", description="Domain prompt learning over a frozen toy dual encoder.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("pretrain", help="pretrain and save the frozen dual encoder and domain encoder")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain-encoder", choices=("random", "mae"), default="mae")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("train", help="train one base-to-novel episode and write a run directory")
    _episode_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-curves", action="store_true")

    p = sub.add_parser("eval", help="re-evaluate a run directory's checkpoint")
    p.add_argument("--run", type=Path, required=True)

    p = sub.add_parser("crosseval", help="evaluate a trained run on held-out synthetic domains")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--domains", type=int, nargs="+", default=[2, 3])
    p.add_argument("--no-fine", action="store_true", help="skip the disjoint-texture target")

    p = sub.add_parser("gradcheck", help="finite-difference check of the micro model")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("oracles", help="quaternion algebra and low-rank oracle suites")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("report", help="summarise a run directory")
    p.add_argument("--run", type=Path, required=True)
    return parser


def _episode_config(args):
    from .episode import EpisodeConfig
    return EpisodeConfig(seed=args.seed, epochs=args.epochs, shots=args.shots, depth=args.depth,
                         pattern=args.pattern, lora_enabled=not args.no_lora, quat_enabled=not args.no_quat,
                         domain_encoder=args.domain_encoder)


def _cmd_pretrain(args) -> int:
    from .episode import PretrainConfig, pretrain_base, save_base
    base = pretrain_base(PretrainConfig(seed=args.seed, domain_encoder=args.domain_encoder))
    save_base(base, args.out)
    print(f"frozen checkpoints written to {args.out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .episode import train_episode, write_run
    cfg = _episode_config(args)
    result = train_episode(cfg, base_dir=args.base)
    write_run(result, args.out, curves=not args.no_curves)
    r = result.report
    print(f"base {r.acc_base:.2f}  novel {r.acc_novel:.2f}  hm {r.hm:.2f}  "
          f"(zero-shot hm {r.zero_shot_hm:.2f}, {r.wall_clock:.1f}s) -> {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .episode import build_splits, evaluate, load_run_model, seed_streams
    from .metrics import harmonic_mean
    model, cfg, _ = load_run_model(args.run)
    splits = build_splits(cfg, seed_streams(cfg.seed)["data"])
    b, n = evaluate(model, splits, batch=cfg.batch_eval)
    print(json.dumps({"acc_base": b, "acc_novel": n, "hm": harmonic_mean(b, n)}, sort_keys=True))
    return EXIT_OK


def _cmd_crosseval(args) -> int:
    from .episode import cross_dataset_eval, load_run_model, target_splits, zero_shot_cross_eval
    model, cfg, base = load_run_model(args.run)
    targets = target_splits(cfg, tuple(args.domains), include_fine=not args.no_fine)
    out = {"gdpl": cross_dataset_eval(model, targets, cfg.batch_eval),
           "zero_shot": zero_shot_cross_eval(base, targets)}
    print(json.dumps(out, indent=2, sort_keys=True))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    from ..diagnostics import gradcheck
    r = gradcheck(args.seed)
    for group, err in r.detail.items():
        print(f"  {group:14s} {err:.3e}")
    print(f"max relative error {r.value:.3e}")
    print(r.line())
    return EXIT_OK if r.passed else EXIT_INVALID


def _cmd_oracles(args) -> int:
    from ..diagnostics import run_oracles
    results = run_oracles(args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_INVALID


def _cmd_report(args) -> int:
    path = args.run / "report.json"
    rep = json.loads(path.read_text())
    print(f"run {args.run}")
    print(f"  base {rep['acc_base']:.2f}  novel {rep['acc_novel']:.2f}  hm {rep['hm']:.2f}")
    print(f"  zero-shot base {rep['zero_shot_base']:.2f}  novel {rep['zero_shot_novel']:.2f}  "
          f"hm {rep['zero_shot_hm']:.2f}")
    cos = rep["mean_cos_sim"]
    if len(cos) > 1:
        print(f"  mean |cos| epoch 1 {cos[1]:.4f} -> final {cos[-1]:.4f}")
    print(f"  wall clock {rep['wall_clock']:.1f}s")
    return EXIT_OK


COMMANDS = {"pretrain": _cmd_pretrain, "train": _cmd_train, "eval": _cmd_eval, "crosseval": _cmd_crosseval,
            "gradcheck": _cmd_gradcheck, "oracles": _cmd_oracles, "report": _cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (OSError, CheckpointError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
