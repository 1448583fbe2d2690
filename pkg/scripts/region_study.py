#!/usr/bin/env python3
"""Compare forecast-region shapes over a range of covariance eccentricities.

Prints a table of Bonferroni-rectangle vs confidence-ellipse areas and of
the worst-case enlargement approximation error, and writes the region and
error-map figures for a representative covariance.
"""

import math
import sys
from pathlib import Path

import numpy as np

from umpc.cli import main
from umpc.geometry import (
    Covariance2,
    chi2_threshold,
    ellipse_area,
    enlargement_error,
    rectangle_region,
)

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "results" / "regions"

P = 0.90
R_SUM = 1.5


def run() -> int:
    chance = chi2_threshold(P)
    chance95 = chi2_threshold(0.95)
    print(f"p = {P}, r_sum = {R_SUM} m")
    print(f"{'ratio':>8} {'ellipse m^2':>12} {'rect m^2':>10} "
          f"{'rect/ell':>9} {'max |err| m':>12}")
    for ratio in (1.0, 2.0, 5.0, 10.0, 25.0, 100.0):
        sigma = Covariance2(ratio, 0.0, 1.0)
        a_ell = ellipse_area(sigma, chance)
        a_rect = rectangle_region((0, 0), sigma, P).area
        worst = max(
            abs(enlargement_error(sigma, chance95, R_SUM, th))
            for th in np.linspace(0.0, math.pi / 2, 90)
        )
        print(f"{ratio:8.1f} {a_ell:12.4f} {a_rect:10.4f} "
              f"{a_rect / a_ell:9.4f} {worst:12.6f}")

    rc = main(["regions", "--p", str(P), "--sigma", "2", "0.8", "1",
               "--r-sum", str(R_SUM), "--out", str(OUT)])
    rc |= main(["error-map", "--sigma", "25", "0", "1", "--r-sum", str(R_SUM),
                "--resolution", "180", "--out", str(OUT)])
    print(f"figures in {OUT}")
    return rc


if __name__ == "__main__":
    sys.exit(run())
