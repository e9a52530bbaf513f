#!/usr/bin/env python3
"""Compare the compiled kernel backend with the pure-Python fallback.

Same as `dexhand bench`; kept as a standalone script so the benchmark runs
straight from a checkout:

    python benchmarks/bench_kernels.py [--steps N]
"""

import argparse
import pathlib
import sys

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parent.parent / "src"))

from dexhand.benchmark import run_benchmarks  # noqa: E402

if __name__ == "__main__":
    parser = argparse.ArgumentParser()
    parser.add_argument("--steps", type=int, default=2000)
    args = parser.parse_args()
    run_benchmarks(args.steps)
