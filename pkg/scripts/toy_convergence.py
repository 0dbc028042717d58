"""Train the toy model through all three phases and report held-out EPE.

    python scripts/toy_convergence.py --iterations 100,400,400
    python scripts/toy_convergence.py --no-edge-cues      # hybrid-feature variant
"""
from __future__ import annotations

import argparse
import json
import time

from edgestereo.data import StereoBatch, generate_dataset
from edgestereo.losses import evaluate
from edgestereo.model import EdgeStereo, ModelConfig
from edgestereo.training import PhasePlan, predict, run_phase, smoothed

TRAIN_SEED, HOLDOUT_SEED = 1, 2


def held_out_epe(model, batch) -> float:
    return evaluate(predict(model, batch.left, batch.right), batch.gt, batch.valid).epe


def run(iterations=(100, 400, 400), use_edge_cues=True, model_seed=0, train_seed=0,
        n_train=64, n_holdout=16, verbose=True) -> dict:
    train = generate_dataset(n_train, TRAIN_SEED)
    holdout = StereoBatch.stack(generate_dataset(n_holdout, HOLDOUT_SEED))
    model = EdgeStereo(ModelConfig(use_edge_cues=use_edge_cues), seed=model_seed)
    result = {"use_edge_cues": use_edge_cues, "iterations": list(iterations),
              "untrained_epe": held_out_epe(model, holdout), "phases": []}
    if verbose:
        print(f"untrained EPE {result['untrained_epe']:.3f}", flush=True)
    start = time.perf_counter()
    for spec in PhasePlan.default(iterations=iterations).phases:
        t0 = time.perf_counter()
        trace = run_phase(spec, model, train, train_seed).trace
        epe = held_out_epe(model, holdout)
        s = smoothed(trace)
        row = {"phase": spec.id, "seconds": time.perf_counter() - t0, "epe": epe,
               "loss_first": float(s[0]) if len(s) else None,
               "loss_last": float(s[-1]) if len(s) else None}
        result["phases"].append(row)
        if verbose:
            print(f"phase {spec.id}: {row['seconds']:.1f}s  smoothed loss "
                  f"{row['loss_first']} -> {row['loss_last']}  EPE {epe:.3f}", flush=True)
    result["seconds"] = time.perf_counter() - start
    result["final_epe"] = result["phases"][-1]["epe"]
    return result


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--iterations", default="100,400,400")
    p.add_argument("--no-edge-cues", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", help="write the result here")
    args = p.parse_args()
    its = tuple(int(v) for v in args.iterations.split(","))
    result = run(its, not args.no_edge_cues, model_seed=args.seed, train_seed=args.seed)
    ratio = result["final_epe"] / result["untrained_epe"]
    print(f"final EPE {result['final_epe']:.3f} ({100 * ratio:.0f}% of untrained), "
          f"{result['seconds']:.0f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(result, fh, indent=2, default=float)


if __name__ == "__main__":
    main()
