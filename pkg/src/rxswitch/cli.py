"""Command-line entry point.

One subcommand per pipeline stage plus `run` (a stage list) and
`serve-review` (the annotation HTTP service). The provider bearer token is
read from the environment only; there is deliberately no flag for it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .pipeline import STAGES, PipelineConfig, PipelineError, run_pipeline
from .report import ReportError

_STAGE_COMMANDS = {s.replace("_", "-"): s for s in STAGES}


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    if args.config:
        config = PipelineConfig.from_file(args.config)
    else:
        config = PipelineConfig.from_dict({})
    if args.seed is not None:
        raw = json.loads(Path(args.config).read_text()) if args.config else {}
        raw["seed"] = args.seed
        config = PipelineConfig.from_dict(raw)
    if args.out:
        config.out_dir = args.out
    return config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="pipeline config (JSON)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--out", help="output directory (overrides config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rxswitch",
        description="medication-switch mining: detection, extraction, "
                    "baselines, topics, enrichment, reports")
    sub = parser.add_subparsers(dest="command", required=True)

    for cmd, stage in _STAGE_COMMANDS.items():
        p = sub.add_parser(cmd, help=f"run the {stage} stage")
        _add_common(p)
        p.set_defaults(stages=[stage])

    p_run = sub.add_parser("run", help="run several stages in pipeline order")
    _add_common(p_run)
    p_run.add_argument("--stages",
                       help="comma-separated stage list (default: all)")

    p_srv = sub.add_parser("serve-review",
                           help="serve the human-review HTTP API")
    p_srv.add_argument("--artifacts", required=True,
                       help="pipeline output dir with prompt-eval artifacts")
    p_srv.add_argument("--store", help="annotation store dir "
                                       "(default: <artifacts>/review)")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8787)
    p_srv.add_argument("--cors-origin", default="*",
                       help="allowed browser origin for the review UI")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve-review":
        import uvicorn

        from .review_service import create_app

        store = Path(args.store) if args.store else Path(args.artifacts) / "review"
        app = create_app(Path(args.artifacts), store,
                         cors_origins=[args.cors_origin])
        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
        return 0

    if args.command == "run":
        stages = (args.stages.split(",") if getattr(args, "stages", None)
                  else None)
        stages = ([s.strip().replace("-", "_") for s in stages]
                  if stages else None)
    else:
        stages = args.stages

    try:
        config = _load_config(args)
        manifest = run_pipeline(config, stages=stages)
    except (PipelineError, ReportError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    for stage, entry in manifest.stages.items():
        outs = ", ".join(sorted(entry["outputs"]))
        print(f"{stage}: {outs}")
    print(f"manifest hash: {manifest.identity_hash()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
