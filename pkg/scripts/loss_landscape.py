"""Tabulate direct and circular phase losses (and their gradients) over a delta grid,
and print the values at the wrap boundary.

    python3 scripts/loss_landscape.py --grid 2001 --out results/landscape.csv
"""

import argparse
import csv
import math
from pathlib import Path

from eegtok.phase_loss import LANDSCAPE_COLUMNS, landscape_grid, loss_landscape


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", type=int, default=2001)
    ap.add_argument("--epsilon", type=float, default=0.01)
    ap.add_argument("--out", default="results/landscape.csv")
    args = ap.parse_args()
    table = loss_landscape(landscape_grid(args.grid, args.epsilon))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LANDSCAPE_COLUMNS)
        w.writerows(table.tolist())
    edge = loss_landscape([2 * math.pi - 2 * args.epsilon])[0]
    print(f"delta = 2pi - 2eps: direct {edge[1]:.4f} (grad {edge[2]:.4f}), "
          f"circular {edge[3]:.4e} (grad {edge[4]:.4e})")
    print(f"max |circular grad| {abs(table[:, 4]).max():.6f}, max |direct grad| {abs(table[:, 2]).max():.4f}")


if __name__ == "__main__":
    main()
