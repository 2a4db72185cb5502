"""Macro-F1 and ECE versus the number of training subjects.

    python scripts/size_sweep.py --out runs/size [--config FILE]
"""

import sys

from templatenet.cli import main

if __name__ == "__main__":
    sys.exit(main(["size-sweep", *sys.argv[1:]]))
