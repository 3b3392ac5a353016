#!/usr/bin/env python3
"""Ring-size sweep: train one encoder per R under identical budgets.

Writes the four-row table (median/mean/std reconstruction error on held-out
identities) as CSV and prints it.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from headfit.modelgen import ModelGenConfig, build_desk_model
from headfit.plots import write_ablation_csv
from headfit.synth import SynthConfig, make_dataset
from headfit.training import TrainConfig, ablate_ring_size


def run(out: Path, ring_sizes: list[int], steps: int, seed: int) -> None:
    model = build_desk_model(ModelGenConfig(seed=seed))
    train_set = make_dataset(model, SynthConfig(identities=6, per_identity=6,
                                                seed=seed))
    validation = make_dataset(model, SynthConfig(identities=3, per_identity=3,
                                                 seed=seed + 1))
    config = TrainConfig(steps=steps, hidden=128, seed=seed)
    rows = ablate_ring_size(train_set, validation, model, ring_sizes, config)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_ablation_csv(rows, out)
    print("ring_size  median_mm  mean_mm    std_mm")
    for row in rows:
        print(f"{row.ring_size:<10d}{row.median_mm:<11.4f}{row.mean_mm:<11.4f}"
              f"{row.std_mm:.4f}")
    print(f"table written to {out}")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("runs/ablation.csv"))
    parser.add_argument("--ring-sizes", default="3,4,5,6")
    parser.add_argument("--steps", type=int, default=400)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    run(args.out, [int(x) for x in args.ring_sizes.split(",")], args.steps,
        args.seed)
