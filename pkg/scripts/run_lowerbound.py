#!/usr/bin/env python3
"""Evaluate the two-hypothesis construction at sigma=1, R=10, eps=0.1.

Writes lowerbound.csv (velocity profiles of the two alternatives on a grid)
and lowerbound_summary.json (eta, TV, separation, risk floor).
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from rflab.cli import main

_CONFIG = os.path.join(os.path.dirname(__file__), "..", "configs",
                       "lowerbound.json")

if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    argv = ["--config", _CONFIG]
    if args.out:
        argv += ["--out", args.out]
    sys.exit(main(argv + ["lowerbound"]))
