"""Regenerate fixtures/regime_stream.csv.

2000 rows from three noisy linear relations, reordered so each relation
arrives in contiguous blocks of 100-200 rows. Features are exogenous and
identically distributed under every relation, so only the targets reveal
which mechanism is active.
"""

from pathlib import Path

from perfclust.datagen import SyntheticConfig, blocked_order, generate_synthetic
from perfclust.pipeline import write_wide_csv

SEED = 0
OUT = Path(__file__).resolve().parents[1] / "fixtures" / "regime_stream.csv"


def main():
    data = generate_synthetic(SyntheticConfig(n_points=2000, seed=SEED))
    order = blocked_order(data.ground_truth, (100, 200), seed=SEED)
    write_wide_csv(OUT, data.dataset.subset(order), data.ground_truth[order])
    print(f"wrote {OUT}")


if __name__ == "__main__":
    main()
