"""Write a synthetic CSV with the NHANES column names used in configs/.

The generating model follows the SBP/DBP model form with ALD errors, so the
CLI can be exercised end to end without the survey files.
"""

import argparse
import csv

import numpy as np

from bqrfp.ald import sample_ald


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=4609)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default="synthetic_nhanes.csv")
    ap.add_argument("--missing", type=float, default=0.01, help="fraction of rows with a blank marital status")
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    n = args.n
    bmi = np.clip(rng.lognormal(np.log(28), 0.2, n), 14, 70)
    age = rng.integers(20, 81, n).astype(float)
    eth = rng.choice(5, n, p=[0.18, 0.12, 0.46, 0.2, 0.04]) + 1
    sex = rng.integers(1, 3, n)
    mar = rng.choice(6, n, p=[0.55, 0.06, 0.11, 0.04, 0.17, 0.07]) + 1
    sbp = (-2.8 * bmi + 36.0 * np.sqrt(bmi) + 0.5 * age + 0.6 * eth - 4.3 * sex + 0.9 * mar
           + sample_ald(n, 3.0, 0.5, rng))
    dbp = (0.6 * bmi - 12.0 * np.sqrt(bmi) - 0.5 * age + 31.0 * np.sqrt(age) + 0.5 * eth - 1.5 * sex
           + 0.2 * mar + sample_ald(n, 2.0, 0.5, rng))
    j = rng.normal(0, 2, (4, n))
    blank = rng.random(n) < args.missing
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["SEQN", "BPXSY2", "BPXSY3", "BPXDI2", "BPXDI3", "BMXBMI", "RIDAGEYR",
                    "RIDRETH1", "RIAGENDR", "DMDMARTL"])
        for i in range(n):
            w.writerow([41475 + i, f"{sbp[i] + j[0, i]:.0f}", f"{sbp[i] + j[1, i]:.0f}",
                        f"{dbp[i] + j[2, i]:.0f}", f"{dbp[i] + j[3, i]:.0f}", f"{bmi[i]:.1f}",
                        f"{age[i]:.0f}", eth[i], sex[i], "" if blank[i] else mar[i]])


if __name__ == "__main__":
    main()
