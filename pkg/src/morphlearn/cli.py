"""Command-line interface.

Subcommands: gen, train, eval, apply, gradcheck, preset.  Exit code 0 on
success; failures print a stage-tagged message and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .datagen import DefectSpec, substream, synth_defects
from .experiments import (PRESETS, StageError, apply_params, evaluate_params,
                          gradcheck_suite, materialize_preset, run)
from .imaging import denormalize, save_pgm


def _fmt(x) -> str:
    return repr(float(x))


def _cmd_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = DefectSpec(n_spots=args.spots, spot_radius=args.spot_radius,
                      n_lines=args.lines, line_len=args.line_len,
                      orientation=args.orientation)
    for i in range(args.n):
        img = synth_defects(args.width, args.height, spec, substream(args.seed, 2, i))
        save_pgm(denormalize(img), out / f"img_{i:03d}.pgm")
    print(f"wrote {args.n} images to {out}")
    return 0


def _print_report(report) -> None:
    for name, value in report.learned_p:
        print(f"param,{name},{_fmt(value)}")
    for label, m, p in report.net_metrics:
        print(f"metric,net.{label}.mse,{_fmt(m)}")
        print(f"metric,net.{label}.psnr,{_fmt(p)}")
    if report.baseline_metrics is not None:
        for label, m, p in report.baseline_metrics:
            print(f"metric,baseline.{label}.mse,{_fmt(m)}")
            print(f"metric,baseline.{label}.psnr,{_fmt(p)}")


def _cmd_train(args) -> int:
    config = parse_config(args.config)
    report = run(config, config_label=str(args.config))
    print(f"artifacts written to {report.out_dir}")
    _print_report(report)
    return 0


def _cmd_eval(args) -> int:
    config = parse_config(args.config)
    report = evaluate_params(config, args.params)
    _print_report(report)
    return 0


def _cmd_apply(args) -> int:
    written = apply_params(args.params, args.images, args.out)
    for path in written:
        print(path)
    return 0


def _cmd_gradcheck(args) -> int:
    passed, lines = gradcheck_suite(seeds_per_p=args.seeds)
    for line in lines:
        print(line)
    print("gradcheck:", "PASS" if passed else "FAIL")
    return 0 if passed else 1


def _cmd_preset(args) -> int:
    config_path = materialize_preset(args.name, args.out)
    print(f"wrote {config_path}")
    print(f"run with: morphlearn train {config_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="morphlearn",
        description="learn morphological operators with counter-harmonic mean layers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthesize defect-style PGM datasets")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--spots", type=int, default=8)
    p.add_argument("--spot-radius", type=float, default=1.5)
    p.add_argument("--lines", type=int, default=0)
    p.add_argument("--line-len", type=int, default=12)
    p.add_argument("--orientation", type=int, default=90, choices=(0, 45, 90, 135))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_gen)

    p = sub.add_parser("train", help="run one experiment config")
    p.add_argument("config")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score a params file on a config's held-out set")
    p.add_argument("config")
    p.add_argument("params")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("apply", help="run inference with a params file")
    p.add_argument("params")
    p.add_argument("images", nargs="+")
    p.add_argument("--out", default="pred")
    p.set_defaults(fn=_cmd_apply)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--seeds", type=int, default=3,
                   help="instances per P value (default 3, 27 cases total)")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("preset", help="materialize a built-in experiment")
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_preset)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
