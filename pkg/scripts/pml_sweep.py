"""Normal-incidence PML reflection (dB) against layer thickness and strength."""
import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "tests"))

from harness import pml_reflection_db  # noqa: E402


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--thickness", type=int, nargs="+", default=[4, 6, 8, 10, 14, 20])
    ap.add_argument("--strength", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    a = ap.parse_args()
    print("thickness " + " ".join(f"a={s:<6g}" for s in a.strength))
    for t in a.thickness:
        row = [pml_reflection_db(t, s) for s in a.strength]
        print(f"{t:9d} " + " ".join(f"{db:8.1f}" for db in row))


if __name__ == "__main__":
    main()
