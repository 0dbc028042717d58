"""Train the toy model with and without edge cues and compare held-out metrics.

Both variants share data, seeds and schedule. At desk scale the ordering is
noise; the point is that both pipelines train.

    python scripts/edge_ablation.py --iterations 100,400,400 --json ablation.json
"""
from __future__ import annotations

import argparse
import json

from toy_convergence import run


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", default="100,400,400")
    p.add_argument("--seeds", default="0", help="comma-separated model/training seeds")
    p.add_argument("--json")
    args = p.parse_args()
    its = tuple(int(v) for v in args.iterations.split(","))
    rows = []
    for seed in (int(s) for s in args.seeds.split(",")):
        for edges in (True, False):
            r = run(its, edges, model_seed=seed, train_seed=seed, verbose=False)
            rows.append({"seed": seed, "edge_cues": edges, "untrained_epe": r["untrained_epe"],
                         "final_epe": r["final_epe"], "seconds": r["seconds"]})
            print(f"seed {seed}  edge cues {'on ' if edges else 'off'}  EPE "
                  f"{r['untrained_epe']:.3f} -> {r['final_epe']:.3f}  ({r['seconds']:.0f}s)",
                  flush=True)
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
