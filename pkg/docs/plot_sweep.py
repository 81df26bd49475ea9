#!/usr/bin/env python3
"""Plot a sweep CSV produced by `multioverlap sweep`.

Usage:
    multioverlap sweep --identity four_overlap --s 4 --phi 'q{1,2}^2' \
        --alpha 2 --beta 1 --sizes 6,8,10,12 --realizations 500 --seed 7 \
        --output sweep.csv
    python docs/plot_sweep.py sweep.csv
"""

import sys

import matplotlib.pyplot as plt
import numpy as np

data = np.genfromtxt(sys.argv[1], delimiter=",", names=True)
plt.errorbar(data["N"], np.abs(data["residual"]), yerr=data["stderr"],
             marker="o", capsize=3)
plt.xlabel("N")
plt.ylabel("|residual|")
plt.yscale("log")
plt.title(sys.argv[1])
plt.tight_layout()
plt.savefig(sys.argv[1].replace(".csv", "") + ".png", dpi=150)
print("wrote", sys.argv[1].replace(".csv", "") + ".png")
