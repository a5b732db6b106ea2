"""GP versus NN readout on tanh data for several training lengths.

Each training length gets its own sweep directory; a summary of held-out
medians and the NN-minus-GP gap is printed at the end.

    python scripts/mapping_ablation.py --out results/mapping --seeds 10
"""
import argparse
from pathlib import Path

import numpy as np

from gprnn.experiment import ExperimentConfig, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results/mapping")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sizes", default="50,100,200")
    ap.add_argument("--iters", type=int, default=800)
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()
    rows = []
    for T in (int(s) for s in args.sizes.split(",")):
        cfg = ExperimentConfig(mapping=("tanh",), model_mapping=("gp", "nn"), family=("BI-LSTM",),
                               T=T, test_T=50, heldout="map", max_iter=args.iters,
                               seeds=tuple(range(args.seeds)))
        records, _ = run_experiment(cfg, Path(args.out) / f"T{T}", workers=args.workers)
        med = {m: float(np.median([r["value"] for r in records
                                   if r["metric"] == "rmse_test" and r["model_mapping"] == m]))
               for m in ("gp", "nn")}
        rows.append((T, med["gp"], med["nn"]))
    print("| T | GP | NN | NN - GP |")
    print("|---|---|---|---|")
    for T, gp, nn in rows:
        print(f"| {T} | {gp:.4f} | {nn:.4f} | {nn - gp:+.4f} |")


if __name__ == "__main__":
    main()
