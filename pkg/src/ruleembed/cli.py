"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
divergence, 4 internal invariant violation. ``RULEEMBED_LOG`` sets the log
level (default WARNING).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import STAGES, load_config
from .errors import RuleEmbedError

log = logging.getLogger("ruleembed")

LOG_ENV = "RULEEMBED_LOG"

COMMAND_STAGES = {
    "mine": ("mine",),
    "embed": ("sample", "factorize"),
    "train": ("train",),
    "eval": ("evaluate",),
    "run-all": STAGES,
}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ruleembed", description="Rule-guided attribute embeddings for recommendation")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("mine", "embed", "train", "eval", "run-all", "ablate"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="run configuration file")
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        sp.add_argument("--variant", help="ablation variant for single runs")
        sp.add_argument("--seed", type=int, help="seed for single runs")
        if name == "run-all":
            sp.add_argument("--resume-from", choices=STAGES)
        if name == "ablate":
            sp.add_argument("--missingness", action="store_true",
                            help="repeat the ablation at every eval.drop_ratios value")
    return p


def _setup_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    _setup_logging()
    args = _parser().parse_args(argv)
    from . import pipeline

    try:
        cfg = load_config(args.config)
        if args.variant:
            cfg.variant = args.variant
        if args.seed is not None:
            cfg.seeds = (args.seed,)
        cfg.validate()
        if args.command == "ablate":
            reports, paths = pipeline.ablate(cfg, out_dir=args.out, missingness=args.missingness)
            sys.stdout.write(pipeline.format_table(reports))
            return 0
        res = pipeline.run_pipeline(cfg, resume_from=getattr(args, "resume_from", None),
                                    stages=COMMAND_STAGES[args.command], out_dir=args.out)
        if res.report is not None:
            r = res.report
            print(f"{r.variant} seed={r.seed} Recall@{r.K}={r.recall_at_k:.4f} NDCG@{r.K}={r.ndcg_at_k:.4f}")
        print(f"artifacts in {res.out_dir}")
        return 0
    except RuleEmbedError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except Exception as exc:  # unexpected failures count as invariant violations
        log.exception("internal error")
        print(f"internal error: {exc!r}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
