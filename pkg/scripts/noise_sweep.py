"""Macro-F1 and ECE of template and baseline models under additive Gaussian noise.

    python scripts/noise_sweep.py --out runs/noise [--config FILE] [--threads N]
"""

import sys

from templatenet.cli import main

if __name__ == "__main__":
    sys.exit(main(["noise-sweep", *sys.argv[1:]]))
