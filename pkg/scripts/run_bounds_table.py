#!/usr/bin/env python3
"""Evaluate every bound formula at one documented operating point.

Writes bounds.json (nested report) and bounds.csv (flat key/value table):
covering number, chaining integral, localization fixed point, statistical
bound, required sample size, truncation budget.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from rflab.cli import main

_CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                       "bounds_table.json")

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    argv = ["--config", _CONFIG]
    if args.out:
        argv += ["--out", args.out]
    sys.exit(main(argv + ["bounds"]))
