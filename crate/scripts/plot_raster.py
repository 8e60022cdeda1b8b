#!/usr/bin/env python3
"""Plot a raster.csv written by `turbidspike evaluate`.

usage: plot_raster.py raster.csv [out.png]
"""
import csv
import sys
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def main():
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    sets = defaultdict(lambda: ([], []))
    with open(sys.argv[1], newline="") as f:
        for row in csv.DictReader(f):
            steps, neurons = sets[row["set_name"]]
            steps.append(int(row["step"]))
            neurons.append(int(row["neuron"]))
    if not sets:
        sys.exit("no spikes in " + sys.argv[1])
    fig, axes = plt.subplots(len(sets), 1, sharex=True, figsize=(8, 2.5 * len(sets)), squeeze=False)
    for ax, (name, (steps, neurons)) in zip(axes[:, 0], sets.items()):
        ax.scatter(steps, neurons, s=1, marker="|", color="black")
        ax.set_ylabel("neuron")
        ax.set_title(name, fontsize=9)
    axes[-1, 0].set_xlabel("time step")
    fig.tight_layout()
    out = sys.argv[2] if len(sys.argv) > 2 else "raster.png"
    fig.savefig(out, dpi=150)
    print(out)


if __name__ == "__main__":
    main()
