"""Observability ratio of trapped standing beams on the strip region as the frequency grows."""
import argparse

import numpy as np

from gcclab.analysis import interior_observability
from gcclab.geometry import Domain, build_grid
from gcclab.regions import preset_region
from gcclab.wave import WaveOperator, gaussian_beam


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", type=int, default=128)
    ap.add_argument("--modes", type=int, nargs="+", default=[8, 16, 32])
    ap.add_argument("--T", type=float, default=2 * np.sqrt(2))
    args = ap.parse_args(argv)

    grid = build_grid(Domain.unit_square(), args.resolution)
    omega = preset_region("omega3", grid)
    op = WaveOperator(grid)
    print("n   sigma     k_hat")
    for n in args.modes:
        sigma = np.sqrt(1 / (np.pi * n))
        rep = interior_observability(grid, omega, args.T, gaussian_beam(grid, sigma, n, op=op), op=op)
        print(f"{n:<3d} {sigma:.5f}  {rep.k_hat:.4g}")


if __name__ == "__main__":
    main()
