#!/usr/bin/env python3
"""Command-line entry point: ``run``, ``eval``, ``plot`` and ``summarize``.

    python main.py run --config data/configs/icql.json --set run.seeds=[0,1,2]
    python main.py eval runs/icql/checkpoints/seed_0_ep020000.pt --episodes 100
    python main.py plot runs/
    python main.py summarize runs/ --threshold 9 --consecutive 3
"""
import argparse
import logging
import os
import sys

from dotenv import load_dotenv

from tools.config import ConfigError, parse_config

logger = logging.getLogger("main")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Independent centrally-assisted Q-learning laboratory")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings only, no progress bars")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train every configured seed")
    run.add_argument("--config", default=os.environ.get("ICQL_CONFIG"), help="JSON config file")
    run.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                     help="override a config key, e.g. intrinsic.sigma=0 (repeatable)")
    run.add_argument("--output", default=os.environ.get("ICQL_OUTPUT_DIR"), help="output directory")

    ev = sub.add_parser("eval", help="greedy decentralized evaluation of a checkpoint")
    ev.add_argument("checkpoint")
    ev.add_argument("--episodes", type=int, default=None)
    ev.add_argument("--seed", type=int, default=0)

    pl = sub.add_parser("plot", help="learning curves from metrics CSVs")
    pl.add_argument("metrics_dir")
    pl.add_argument("--out", default=None)
    pl.add_argument("--smooth", type=int, default=1, help="rolling window for training returns")

    sm = sub.add_parser("summarize", help="episodes-to-threshold and late-training spread per group")
    sm.add_argument("metrics_dir")
    sm.add_argument("--threshold", type=float, default=9.0)
    sm.add_argument("--consecutive", type=int, default=3)
    return parser


def main(argv=None) -> int:
    load_dotenv()
    args = _build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="[%(name)s] %(message)s")

    # Heavy imports after logging is configured
    from agents.experiment import eval_checkpoint, run
    from tools.plotting import plot, summarize

    try:
        if args.command == "run":
            config = parse_config(args.config, args.overrides)
            run(config, args.output, progress=not args.quiet)
        elif args.command == "eval":
            mean, stderr = eval_checkpoint(args.checkpoint, args.episodes, args.seed)
            print(f"test return {mean:.3f} +- {stderr:.3f}")
        elif args.command == "plot":
            for path in plot(args.metrics_dir, args.out, args.smooth):
                print(path)
        elif args.command == "summarize":
            print(summarize(args.metrics_dir, args.threshold, args.consecutive).to_string(index=False))
    except ConfigError as e:
        logger.error("Invalid configuration: %s", e)
        return 2
    except OSError as e:
        logger.error("%s", e)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
