"""How far does a sign-gradient attack move an image along the directions
that separate class means?

For a linear classifier the attack direction for true class y and
competing class c is sign(W_c - W_y). Purification with the mixture prior
keeps only the component of a perturbation along the class-mean
differences, so this projection bounds what any sign-gradient attack
(PGD or BPDA) can still do after purification.
"""
import argparse
import json

import numpy as np

from guidedpur.harness import RunConfig, build_benchmark


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default="{}", help="inline JSON overrides")
    args = p.parse_args()
    cfg = RunConfig.from_dict(json.loads(args.config))
    bench = build_benchmark(cfg)
    W = bench.model.W
    means = bench.gmm.means.reshape(len(W), -1)
    gamma = cfg.attack.gamma
    print("true  other  push along mean difference  half distance between means")
    for y in range(len(W)):
        for c in range(len(W)):
            if c == y:
                continue
            diff = means[c] - means[y]
            push = gamma * np.sign(W[c] - W[y]) @ diff / np.linalg.norm(diff)
            print(f"{y:4d}  {c:5d}  {push:26.4f}  {np.linalg.norm(diff) / 2:27.4f}")


if __name__ == "__main__":
    main()
