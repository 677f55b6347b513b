"""Command line: ``irguide {train,sr,ablate,verify}``.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
"""

import argparse
import json
import logging
import os
import sys

from .errors import (ConfigError, Divergence, ImageFormatError, IncompatibleShape, NonFiniteState,
                     ShapeMismatch)

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--config", required=True, metavar="PATH", help="YAML experiment config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", metavar="DIR", help="override the output directory")


def build_parser():
    parser = _Parser(prog="irguide", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the conditional denoiser")
    _common(p)

    p = sub.add_parser("sr", help="super-resolve with the configured guidance")
    _common(p)
    p.add_argument("--checkpoint", required=True, metavar="PATH")
    p.add_argument("--lr-dir", metavar="DIR", help="LR images (.pgm/.png); default: the config's test set")
    p.add_argument("--hr-dir", metavar="DIR", help="HR references matching --lr-dir (same sorted order)")
    p.add_argument("--trajectories", action="store_true", help="write per-step JSON lines")

    p = sub.add_parser("ablate", help="run the 4 + 2 cell ablation")
    _common(p)
    p.add_argument("--checkpoint", metavar="PATH", help="reuse a trained model instead of training")

    p = sub.add_parser("verify", help="run the verification suite")
    p.add_argument("--full", action="store_true", help="include training and end-to-end runs")
    p.add_argument("--out", metavar="DIR", help="write report.json (and end-to-end outputs) here")
    return parser


def _load(args):
    from .config import load_config
    cfg = load_config(args.config)
    return cfg.with_overrides(seed=args.seed, output_dir=args.out)


def _read_stack(path):
    from .experiments import read_image_dir
    return read_image_dir(path)


def _cmd_train(args):
    from .experiments import run_train
    res = run_train(_load(args))
    print(f"checkpoint {res['checkpoint']}")
    if "initial_loss" in res:
        print(f"loss {res['initial_loss']:.5f} -> {res['final_loss']:.5f}")
    return EXIT_OK


def _cmd_sr(args):
    from .experiments import run_sr
    cfg = _load(args)
    lr = _read_stack(args.lr_dir) if args.lr_dir else None
    hr = _read_stack(args.hr_dir) if args.hr_dir else None
    if hr is not None and lr is None:
        raise ConfigError("--hr-dir requires --lr-dir")
    res = run_sr(cfg, args.checkpoint, lr, hr, trajectories=args.trajectories)
    for r in res.get("rows", []):
        if r["image"] == "mean":
            print(f"{r['method']:<40s} psnr {r['psnr']:.3f}  ssim {r['ssim']:.4f}  visual {r['visual_loss']:.4f}")
    print(f"{len(res['images'])} images written")
    return EXIT_OK


def _cmd_ablate(args):
    from .experiments import run_ablation
    res = run_ablation(_load(args), args.checkpoint)
    for r in res["rows"]:
        print(f"{r['cell']:<18s} psnr {r['psnr']:.3f}  ssim {r['ssim']:.4f}  visual {r['visual_loss']:.4f}")
    print(f"csv {res['csv']}")
    return EXIT_OK


def _cmd_verify(args):
    from .verify import run_verify
    workdir = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        workdir = args.out
    results = run_verify(full=args.full, workdir=workdir)
    for r in results:
        print(r.line(), flush=True)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if args.out:
        report = [{"name": r.name, "passed": r.passed, "seconds": r.seconds, "detail": r.detail}
                  for r in results]
        with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {"train": _cmd_train, "sr": _cmd_sr, "ablate": _cmd_ablate, "verify": _cmd_verify}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ImageFormatError, ShapeMismatch, IncompatibleShape) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (Divergence, NonFiniteState) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
