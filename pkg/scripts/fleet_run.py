"""Run every shipped config through ``fcltlab report`` and tabulate exit codes.

Usage: python scripts/fleet_run.py [--workers N] [--out DIR]
"""
import argparse
import os
from pathlib import Path

from fcltlab import cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--out", default=str(ROOT / "out" / "fleet"))
    args = ap.parse_args()
    results = []
    for cfg in sorted((ROOT / "configs").glob("*.yaml")):
        out = Path(args.out) / cfg.stem
        code = cli.main(["report", "--config", str(cfg), "--workers", str(args.workers),
                         "--out", str(out)])
        results.append((cfg.stem, code))
    width = max(len(name) for name, _ in results)
    for name, code in results:
        print(f"{name:<{width}}  exit {code}")


if __name__ == "__main__":
    main()
