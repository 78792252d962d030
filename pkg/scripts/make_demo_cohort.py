"""Dump a synthetic cohort CSV next to the sample configs.

The sample configs reference "cohort.csv"; this writes one from the
two-stratum generator so every config runs out of the box.

Usage: python3 scripts/make_demo_cohort.py [n] [seed]
"""

import sys
from pathlib import Path

from mtsens import simlab
from mtsens.dataset import save_csv

n = int(sys.argv[1]) if len(sys.argv) > 1 else 1500
seed = int(sys.argv[2]) if len(sys.argv) > 2 else 0
out = Path(__file__).resolve().parent.parent / "sample_configs" / "cohort.csv"
truth = simlab.gen_illustrative(n, seed=seed)
save_csv(truth.dataset, out)
print(f"wrote {out} (n={n}, seed={seed})")
