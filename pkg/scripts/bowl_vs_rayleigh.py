"""Focused bowl in water: solver amplitude against Rayleigh surface quadrature.

    python scripts/bowl_vs_rayleigh.py --n 128 --roc 30 --diameter 20
"""
import argparse
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

import harness  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=128)
    ap.add_argument("--roc", type=float, default=30.0)
    ap.add_argument("--diameter", type=float, default=20.0)
    ap.add_argument("--t-end", type=float, default=60e-6)
    a = ap.parse_args()
    t0 = time.perf_counter()
    r = harness.bowl_in_water(a.n, a.roc, a.diameter, a.t_end)
    r = {k: (v.tolist() if hasattr(v, "tolist") else v) for k, v in r.items()}
    r["wall_s"] = time.perf_counter() - t0
    print(json.dumps(r, indent=2, default=float))


if __name__ == "__main__":
    main()
