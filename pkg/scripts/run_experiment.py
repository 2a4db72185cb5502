"""Full template-vs-baseline comparison plus calibration and saliency for one config.

    python scripts/run_experiment.py --config configs/default.yaml --out runs/full

Runs ``eval`` (all eval seeds), then ``calibrate`` and ``saliency`` for the
root seed, each into its own sub-directory of ``--out``.
"""

import argparse
import sys
from pathlib import Path

from templatenet.cli import main


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    parser.add_argument("--out", default="runs/full")
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)
    common = ["--config", args.config] if args.config else []
    for command in ("eval", "calibrate", "saliency"):
        extra = ["--threads", str(args.threads)] if command == "eval" else []
        code = main([command, *common, "--out", str(Path(args.out) / command), *extra])
        if code:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(run())
