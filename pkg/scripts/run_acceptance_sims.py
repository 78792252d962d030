"""Heavy replication runs backing the acceptance suite.

Results land as JSON lines under the cache directory, one line per
(replication, strategy, pair). Reruns skip replications already present, so
an interrupted run resumes where it stopped. The acceptance tests read these
files instead of refitting for hours.

Blocks:
  illustrative  100 reps x (naive, I, I3) on the two-stratum cohort, n=1500
  contextual    100 reps x (naive, I) on the default 15-covariate cohort
  oracle        100 reps x (oracle) on the two-stratum cohort, n=1500
  monotone      one frozen dataset, four nested prior widths (same seed)

Usage: python3 scripts/run_acceptance_sims.py <block> [--reps N] [--cache DIR]
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from mtsens import simlab, sumtrees
from mtsens._rng import SIM_STREAM, subseed
from mtsens.confounding import ConfoundingSpec, Uniform, residual_sd
from mtsens.engine import EngineConfig, GpsModelConfig, run_sensitivity

PAIRS = ((1, 2), (1, 3), (2, 3))


def done_reps(path: Path, lines_per_rep: int) -> set[int]:
    if not path.exists():
        return set()
    counts: dict[int, int] = {}
    with path.open() as fh:
        for line in fh:
            rec = json.loads(line)
            counts[rec["rep"]] = counts.get(rec["rep"], 0) + 1
    return {r for r, c in counts.items() if c >= lines_per_rep}


def run_block(block: str, reps: int, cache: Path, master_seed: int) -> None:
    if block == "illustrative":
        scenario, strategies = "illustrative", ("naive", "I", "I3")
    elif block == "contextual":
        scenario, strategies = "contextual-umc1", ("naive", "I")
    elif block == "oracle":
        scenario, strategies = "illustrative", ("oracle",)
    else:
        raise SystemExit(f"unknown block {block!r}")
    lines_per_rep = 3 * len(strategies)
    out = cache / f"{block}_reps.jsonl"
    have = done_reps(out, lines_per_rep)
    trees = sumtrees.SumOfTreesConfig.fast()
    illustrative = scenario.startswith("illustrative")
    for r in range(reps):
        if r in have:
            continue
        t0 = time.time()
        gen_seed = subseed(master_seed, SIM_STREAM, r, 0)
        eng_seed = subseed(master_seed, SIM_STREAM, r, 1)
        truth = simlab._gen_scenario(scenario, 1500, "strong", "1:1:1", gen_seed)
        lines = []
        for strategy in strategies:
            rows = simlab._run_strategy(
                truth, strategy, illustrative, 10, 10, trees, eng_seed,
                1.0, "down", None,
            )
            for (j, k), (est, lo, hi) in rows.items():
                lines.append(
                    json.dumps(
                        {"rep": r, "strategy": strategy, "pair": [j, k],
                         "est": est, "lo": lo, "hi": hi}
                    )
                )
        with out.open("a") as fh:
            fh.write("\n".join(lines) + "\n")
        print(f"rep {r:3d} done in {time.time() - t0:6.1f}s", flush=True)
    print(f"{block}: all {reps} reps present in {out}")


def run_monotone(cache: Path) -> None:
    """One frozen two-stratum dataset, four nested prior families."""
    out = cache / "monotone_widths.json"
    truth = simlab.gen_illustrative(1500, seed=404)
    ds = truth.dataset
    sig = residual_sd(ds)
    every_pair = [(j, k) for j in (1, 2, 3) for k in (1, 2, 3) if j != k]
    specs = {
        "point": simlab.strategy_spec(truth, "I", stratified_column=None),
        "u1": simlab.strategy_spec(truth, "II", sigma_hat=sig, h=1.0),
        "u2": simlab.strategy_spec(truth, "II", sigma_hat=sig, h=2.0),
        "full": ConfoundingSpec({p: Uniform(-1.0, 1.0) for p in every_pair}),
    }
    cfg = EngineConfig(
        m1=10, m2=10, estimand="CATE",
        gps=GpsModelConfig(model="stratified", strat_columns=(0,)),
        trees=sumtrees.SumOfTreesConfig.fast(), seed=2024, jobs=1,
    )
    result = {}
    for name, spec in specs.items():
        t0 = time.time()
        res = run_sensitivity(ds, spec, cfg)
        result[name] = {
            f"{j}v{k}": [res.effect(j, k).lower95, res.effect(j, k).upper95]
            for j, k in PAIRS
        }
        print(f"{name}: {time.time() - t0:.1f}s", flush=True)
    out.write_text(json.dumps(result, indent=1, sort_keys=True))
    print("wrote", out)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("block", choices=["illustrative", "contextual", "oracle", "monotone"])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--cache", default=".cache")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    cache = Path(args.cache)
    cache.mkdir(parents=True, exist_ok=True)
    if args.block == "monotone":
        run_monotone(cache)
    else:
        run_block(args.block, args.reps, cache, args.seed)


if __name__ == "__main__":
    main()
