"""Hyper-parameter sweeps: Tc with and without guidance, iteration count M
at a fixed step budget, respacing K, and the perturbation bound gamma.

    python scripts/run_sweeps.py --out-dir results/sweeps
"""
import argparse
from pathlib import Path

import numpy as np

from guidedpur.harness import RunConfig, sweep, sweep_table, write_csv


def averaged(cfg_dict, axis, values, seeds):
    """Sweep table with accuracies averaged over seeds."""
    per_seed = [sweep_table(axis, sweep(RunConfig.from_dict({**cfg_dict, "seed": s}), axis, values))
                for s in seeds]
    rows = []
    for i, value in enumerate(values):
        row = {axis: value}
        for key in ("standard_accuracy", "robust_accuracy", "undefended_robust_accuracy", "purify_seconds"):
            row[key] = f"{np.mean([float(t[i][key]) for t in per_seed]):.4f}"
        rows.append(row)
    return rows


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--out-dir", default="results/sweeps")
    args = p.parse_args()
    out = Path(args.out_dir)

    tcs = [10, 29, 50, 100, 200, 300, 400, 500]
    for name, extra in (("unguided", {}), ("guided_mse", {"guided": True}),
                        ("guided_ssim", {"guided": True, "guidance": {"metric": "ssim"}})):
        rows = averaged({"purify": extra}, "Tc", tcs, args.seeds)
        write_csv(rows, out / f"tc_{name}.csv")
        print(name, [(r["Tc"], r["standard_accuracy"], r["robust_accuracy"]) for r in rows])

    # same total number of reverse steps (120) split into M iterations
    rows = []
    for M in (1, 2, 4, 8):
        r = averaged({"purify": {"M": M}}, "Tc", [120 // M], args.seeds)[0]
        rows.append({"M": M, **r})
    write_csv(rows, out / "m_fixed_budget.csv")
    print("M", [(r["M"], r["robust_accuracy"]) for r in rows])

    rows = averaged({}, "respace_K", [1000, 500, 250, 100, 50, 25], args.seeds)
    write_csv(rows, out / "respace.csv")
    print("respace", [(r["respace_K"], r["robust_accuracy"], r["purify_seconds"]) for r in rows])

    rows = averaged({"purify": {"guided": True}}, "gamma", [2 / 255, 4 / 255, 8 / 255, 16 / 255], args.seeds)
    write_csv(rows, out / "gamma.csv")
    print("gamma", [(r["gamma"], r["robust_accuracy"]) for r in rows])


if __name__ == "__main__":
    main()
