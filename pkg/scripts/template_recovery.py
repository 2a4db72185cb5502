"""Pre-train filter banks over several seeds and score them against the planted templates.

    python scripts/template_recovery.py --seeds 0 1 2 3 4 --out runs/recovery.csv

A seed counts as recovered when at least two templates reach a max-lag
|cosine| of 0.9 with some filter.
"""

import argparse
import csv
import sys
import time

from templatenet.cli import load_config
from templatenet.pipeline import load_dataset, split_dataset
from templatenet.pretrain import match_template, pretrain
from templatenet.synth import builtin_templates

THRESHOLD = 0.9


def run(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--out", default="template_recovery.csv")
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    templates = builtin_templates()
    rows, recovered = [], 0
    for seed in args.seeds:
        splits = split_dataset(load_dataset(cfg, seed), seed)
        started = time.perf_counter()
        bank = pretrain(splits.train, splits.val, cfg.pretrain_config(seed))
        elapsed = time.perf_counter() - started
        scores = []
        for t in templates:
            k, score, lag = match_template(bank, t.waveform)
            rows.append([seed, t.name, k, lag, repr(score)])
            scores.append(score)
        hit = sum(s >= THRESHOLD for s in scores) >= 2
        recovered += hit
        print(f"seed {seed}: " + " ".join(f"{t.name}={s:.3f}" for t, s in zip(templates, scores))
              + f"  recovered={hit}  ({elapsed:.0f}s)")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seed", "template", "filter", "lag", "abs_cosine"])
        writer.writerows(rows)
    print(f"{recovered}/{len(args.seeds)} seeds recovered at least two templates")
    return 0


if __name__ == "__main__":
    sys.exit(run())
