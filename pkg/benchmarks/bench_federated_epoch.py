"""Project the wall time of a federated Cora run from synthetic measurements.

Usage: python benchmarks/bench_federated_epoch.py [--epochs-cap 30] [--folds 5]

Measures one full protocol iteration at two node counts with Cora's feature
width (1433 binary columns, hidden 64, 7 classes), fits the fixed-plus-linear
cost model, and reports the projected per-epoch and whole-run wall time. The
harness runs folds as parallel processes, so the wall time of a five-fold run
on a machine with five or more usable cores is one fold's epochs.
"""

import argparse
import sys
import time

from fedvgcn.graph import five_fold, make_synthetic_dataset, split_vertical
from fedvgcn.protocol import FederatedConfig, session_setup


def epoch_time(n_nodes: int, seed: int = 3) -> float:
    ds = make_synthetic_dataset(
        n_nodes=n_nodes, n_features=1433, n_classes=7, seed=0,
        target_edges=2 * n_nodes, feature_on=0.25, feature_off=0.02,
    )
    va, vb = split_vertical(ds, 0.5, 0.5, seed=1)
    folds = five_fold(ds, seed=2)
    session = session_setup(va, vb, FederatedConfig(seed=seed, activation="auto"))
    started = time.time()
    session.run_iteration(folds[0].train_ids)
    return time.time() - started


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--epochs-cap", type=int, default=30)
    parser.add_argument("--folds", type=int, default=5)
    parser.add_argument("--target-nodes", type=int, default=2708)
    args = parser.parse_args()

    points = {}
    for n in (150, 400):
        points[n] = epoch_time(n)
        print(f"measured epoch at {n:4d} nodes, 1433 features: {points[n]:6.1f}s")
    (n1, t1), (n2, t2) = sorted(points.items())
    slope = (t2 - t1) / (n2 - n1)
    intercept = t1 - slope * n1
    target = intercept + slope * args.target_nodes
    serial = target * args.epochs_cap * args.folds
    parallel = target * args.epochs_cap
    print(f"\nprojected epoch at {args.target_nodes} nodes: {target:.0f}s "
          f"(fixed {intercept:.0f}s + {slope*1000:.1f}ms/node)")
    print(f"{args.epochs_cap}-epoch x {args.folds}-fold run:")
    print(f"  serial folds:   {serial/3600:.2f} h")
    print(f"  parallel folds: {parallel/3600:.2f} h  (harness default on >= {args.folds} cores)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
