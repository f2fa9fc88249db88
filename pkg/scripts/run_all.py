"""Run every config in scripts/configs and print one verdict line per run.

Usage: python scripts/run_all.py [--out runs] [--workers N] [names ...]
"""
import argparse
import sys
import time
from pathlib import Path

from rwre import harness

CONFIGS = Path(__file__).resolve().parent / "configs"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("names", nargs="*", help="config stems to run (default: all)")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()
    paths = sorted(CONFIGS.glob("*.json"))
    if args.names:
        paths = [p for p in paths if p.stem in args.names]
    failures = 0
    for p in paths:
        t0 = time.perf_counter()
        rep = harness.run(harness.load_config(p), args.out, args.workers)
        bad = [k for k, v in rep.verdicts.items() if not v]
        failures += bool(bad)
        status = "PASS" if not bad else "FAIL " + ",".join(bad)
        print(f"{p.stem:24s} {time.perf_counter() - t0:7.1f}s  {status}", flush=True)
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
