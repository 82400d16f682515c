#!/usr/bin/env python3
"""Run the full pipeline on the bundled demo configuration.

Generates a 400-patient synthetic cohort, detects switches, evaluates the
six prompts with the mock provider, extracts reasons, fits the baselines,
clusters reason topics, scores subgroup enrichment, and renders the SVG
report. Everything lands in ./demo_out (or --out).
"""

import argparse
import json
from pathlib import Path

from rxswitch.fixtures import fixture_path
from rxswitch.pipeline import PipelineConfig, run_pipeline


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_out")
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args()

    raw = json.loads(fixture_path("demo_config.json").read_text())
    raw["out_dir"] = args.out
    if args.seed is not None:
        raw["seed"] = args.seed
    config = PipelineConfig.from_dict(raw)

    manifest = run_pipeline(config)
    out = Path(args.out)
    print(f"artifacts in {out.resolve()}:")
    for stage, entry in manifest.stages.items():
        print(f"  {stage}: {len(entry['outputs'])} files "
              f"({entry['wall_time_ms']} ms)")
    metrics = json.loads((out / "extract" / "extract_metrics.json").read_text())
    print(f"extraction micro-F1 started={metrics['f1_started']:.3f} "
          f"stopped={metrics['f1_stopped']:.3f} over n={metrics['n']} notes")
    print(f"report: {out / 'report'}")


if __name__ == "__main__":
    main()
