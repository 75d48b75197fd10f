"""Command-line entry point: ``pseudodomain <subcommand> [options]``.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 contract violation
or other internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import load_config
from .errors import ContractViolation, GenerationError, ValidationError

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_INTERNAL = 0, 1, 2, 3


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="pipeline config file")
    common.add_argument("--seed", type=int, help="global seed (overrides $GODIFF_SEED and the config)")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--generator", choices=["identity", "procedural"])
    common.add_argument("--embedder", choices=["stub"])
    common.add_argument("--filter-mode", choices=["intent", "paper-literal"])
    common.add_argument("--workers", type=int, help="worker threads (0 = one per CPU)")
    common.add_argument("-v", "--verbose", action="store_true")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="pseudodomain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth", parents=[common], help="write the toy source dataset")
    sub.add_parser("generate", parents=[common], help="generate pseudo-target domains")
    sub.add_parser("filter", parents=[common], help="filter generated objects by RBF similarity")
    sub.add_parser("train-sim", parents=[common], help="run the CSN feature harness")
    p_eval = sub.add_parser("eval", parents=[common], help="score detections (mAP, mPC)")
    p_eval.add_argument("--detections", required=True, metavar="PATH", help="JSON lines detections file")
    p_mmd = sub.add_parser("mmd", parents=[common], help="MMD^2 between two domains' object embeddings")
    p_mmd.add_argument("domain_a")
    p_mmd.add_argument("domain_b")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(
            args.config,
            seed=args.seed,
            out=args.out,
            generator=args.generator,
            embedder=args.embedder,
            workers=args.workers,
            filter_mode=args.filter_mode,
        )
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.command == "synth":
            print(pipeline.cmd_synth(cfg))
        elif args.command == "generate":
            for path in pipeline.cmd_generate(cfg):
                print(path)
        elif args.command == "filter":
            for path in pipeline.cmd_filter(cfg):
                print(path)
        elif args.command == "train-sim":
            print(pipeline.cmd_train_sim(cfg))
        elif args.command == "eval":
            report = pipeline.cmd_eval(cfg, args.detections)
            for domain, value in sorted(report.per_domain_map.items()):
                print(f"{domain}\tmAP {100 * value:.1f}")
            if report.mpc is not None:
                print(f"mPC\t{100 * report.mpc:.1f}")
        elif args.command == "mmd":
            print(repr(pipeline.cmd_mmd(cfg, args.domain_a, args.domain_b)))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ContractViolation, GenerationError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
