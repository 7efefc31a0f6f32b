#!/usr/bin/env python3
"""Run experiment presets in sequence and print the cumulative table.

Examples:
    python3 scripts/run_experiments.py --presets baseline,nce,neg
    python3 scripts/run_experiments.py --presets all --seed 7
"""

import argparse
import time
from pathlib import Path

from qeforge.experiments import (
    ExperimentConfig,
    PRESETS,
    ensure_benchmark,
    load_experiment_config,
    run_experiment_preset,
)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--presets", default="baseline",
                        help="comma-separated preset tags, or 'all'")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--config", default=None, help="ExperimentConfig JSON")
    parser.add_argument("--data-root", default=None)
    parser.add_argument("--out-dir", default=None)
    args = parser.parse_args()

    config = load_experiment_config(args.config) if args.config else ExperimentConfig()
    import dataclasses
    for name in ("seed", "data_root", "out_dir"):
        value = getattr(args, name)
        if value is not None:
            config = dataclasses.replace(config, **{name: value})
    ensure_benchmark(config.data_root)

    presets = list(PRESETS) if args.presets == "all" else [
        p.strip() for p in args.presets.split(",") if p.strip()]
    for preset in presets:
        t0 = time.time()
        report = run_experiment_preset(preset, config)
        print(f"== {preset} ({time.time() - t0:.0f}s) ==")
        print(report.to_text())
        print()

    table = Path(config.out_dir) / "results.tsv"
    print(f"cumulative results ({table}):")
    print(table.read_text(), end="")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
