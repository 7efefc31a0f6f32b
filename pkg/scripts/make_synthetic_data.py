#!/usr/bin/env python3
"""Materialize the synthetic QE benchmark (all five language pairs).

The corpora are a deterministic function of the benchmark spec, so
regenerating into the same directory always reproduces the same files.
"""

import argparse
from pathlib import Path

from qeforge.synthetic import ALL_PAIRS, BenchmarkSpec, pair_files, write_benchmark


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--root", default="data/synthetic",
                        help="output directory (default: data/synthetic)")
    args = parser.parse_args()
    root = Path(args.root)
    write_benchmark(root, BenchmarkSpec())
    for pair in ALL_PAIRS:
        for name, path in sorted(pair_files(root, pair).items()):
            n_lines = sum(1 for _ in open(path, encoding="utf-8"))
            print(f"{path}  ({n_lines} rows)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
