"""Build the seven-scale configuration and time one forward pass at 256x512."""
from __future__ import annotations

import argparse
import time

import numpy as np

from edgestereo.model import EdgeStereo, ModelConfig


def main() -> None:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=512)
    args = p.parse_args()
    model = EdgeStereo(ModelConfig.full(), seed=0)
    n_params = sum(p.value.size for p in model.parameters())
    left, right = np.random.default_rng(0).uniform(
        size=(2, 1, 3, args.height, args.width)).astype(np.float32)
    t0 = time.perf_counter()
    out = model(left, right)
    print(f"{n_params} parameters, forward {time.perf_counter() - t0:.2f}s")
    for s, d in zip(range(len(out.disparities) - 1, -1, -1), out.disparities):
        print(f"scale {s}: {d.shape[-2]}x{d.shape[-1]}")


if __name__ == "__main__":
    main()
