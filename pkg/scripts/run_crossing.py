#!/usr/bin/env python3
"""Run the perpendicular "crossing" scenario and print the separation summary."""

import sys
from pathlib import Path

from umpc.cli import main

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "results" / "crossing"

if __name__ == "__main__":
    rc = main(["run",
               "--config", str(ROOT / "scenarios" / "crossing.toml"),
               "--out", str(OUT)] + sys.argv[1:])
    summary = OUT / "summary.json"
    if summary.exists():
        print(summary.read_text())
    print(f"outputs in {OUT}")
    sys.exit(rc)
