"""Regression benchmark on the synthetic drift preset, plus the stability study.

    python3 scripts/run_regression_benchmark.py [--config configs/regression_drift.json] [--no-stability]
"""
import argparse
import json
import logging
import time
from pathlib import Path

import numpy as np
import torch

from repshot import io
from repshot.cli import load_dataset, run_benchmark
from repshot.harness import kfold_split, stability_study
from repshot.seeding import derive_seed

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", default=ROOT / "configs" / "regression_drift.json")
    ap.add_argument("--no-stability", action="store_true")
    ap.add_argument("--plots", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)

    cfg = io.load_config(args.config)
    out = Path(cfg.output_dir)
    io.save_config(out / "run_config.json", cfg)
    t0 = time.time()
    report = run_benchmark(cfg)
    io.save_report(report, out)
    print(report.render())
    print(f"benchmark: {time.time() - t0:.0f}s")
    if args.plots:
        from repshot.plots import save_plots

        save_plots(report, out)

    if not args.no_stability:
        t0 = time.time()
        data = load_dataset(cfg)
        folds = kfold_split(len(data), k=cfg.folds, seed=derive_seed(cfg.seed, "folds"))
        stab = stability_study(data, cfg.evolution, cfg.template, runs=20, seed=cfg.seed, folds=folds)
        (out / "stability.json").write_text(json.dumps(stab, indent=2) + "\n")
        print(
            f"stability: random {np.mean(stab['random_mae']):.4f} ± {stab['random_std']:.4f}, "
            f"cbt {np.mean(stab['cbt_mae']):.4f} ± {stab['cbt_std']:.4f} ({time.time() - t0:.0f}s)"
        )


if __name__ == "__main__":
    main()
