"""Classification benchmark on the well-separated and the null synthetic presets.

    python3 scripts/run_classification_benchmark.py [config.json ...]
"""
import logging
import sys
import time
from pathlib import Path

import torch

from repshot import io
from repshot.cli import run_benchmark

ROOT = Path(__file__).resolve().parents[1]
DEFAULT = [ROOT / "configs" / "classification_separated.json", ROOT / "configs" / "classification_null.json"]


def main(paths):
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    torch.set_num_threads(1)
    for path in paths or DEFAULT:
        cfg = io.load_config(path)
        out = Path(cfg.output_dir)
        io.save_config(out / "run_config.json", cfg)
        t0 = time.time()
        report = run_benchmark(cfg)
        io.save_report(report, out)
        print(f"## {Path(path).stem} (separation {cfg.synthetic.class_separation if cfg.synthetic else 'n/a'})")
        print(report.render())
        print(f"{time.time() - t0:.0f}s\n")


if __name__ == "__main__":
    main(sys.argv[1:])
