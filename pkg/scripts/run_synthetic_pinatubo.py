"""Run every pipeline stage on the synthetic eruption scenario and print the headline numbers.

    python scripts/run_synthetic_pinatubo.py [--config configs/pinatubo.json] [--out DIR] [--threads N]
"""
import argparse
import json
import sys
from pathlib import Path

from pathway_miner import cli

ROOT = Path(__file__).resolve().parents[1]
STAGES = ["gen", "stability", "cluster", "detect", "mine", "assert", "report"]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "pinatubo.json"))
    ap.add_argument("--out", default=None)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--skip-stability", action="store_true", help="the sweep is the slowest stage")
    args = ap.parse_args()

    extra = ["--threads", str(args.threads)] + (["--out", args.out] if args.out else [])
    for stage in STAGES:
        if stage == "stability" and args.skip_stability:
            continue
        print(f"== {stage}", flush=True)
        code = cli.main([stage, "--config", args.config, *extra])
        if code:
            return code

    out = Path(args.out) if args.out else (Path(args.config).parent / json.loads(Path(args.config).read_text())["out"]).resolve()
    summary = json.loads((out / "assert" / "summary.json").read_text())
    print(json.dumps({k: summary[k] for k in sorted(summary) if not isinstance(summary[k], list)}, indent=2))
    print(f"report: {out / 'report' / 'report.md'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
