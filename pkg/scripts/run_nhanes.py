"""Full NHANES run: descriptive tables plus qr, bqr and bqrvs for SBP and DBP.

Usage: python scripts/run_nhanes.py path/to/extract.csv [--out results] [--jobs 3]

Any CSV with the NHANES 2007-2008 column names from configs/ works, e.g.
the output of scripts/make_synthetic_nhanes.py.
"""

import argparse
import json
import sys
from pathlib import Path

from bqrfp.cli import main as cli

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("data")
    ap.add_argument("--out", default="results")
    ap.add_argument("--jobs", type=int, default=3)
    ap.add_argument("--methods", default="qr,bqr,bqrvs")
    args = ap.parse_args()

    for resp in ("sbp", "dbp"):
        cfg = str(ROOT / "configs" / f"{resp}.toml")
        out = Path(args.out) / resp
        if cli(["describe", "--data", args.data, "--config", cfg, "--out", str(out / "describe")]):
            sys.exit(1)
        for method in args.methods.split(","):
            dest = out / method
            if cli(["fit", "--data", args.data, "--config", cfg, "--method", method,
                    "--out", str(dest), "--jobs", str(args.jobs)]):
                sys.exit(1)
            report = json.loads((dest / "report.json").read_text())
            for block in report["fits"]:
                print(f"\n{resp.upper()} {method} tau={block['tau']}")
                for row in block["coefficients"]:
                    print(f"  {row['column']:<14} {row['estimate']:9.3f} ({row['lower']:.3f}, {row['upper']:.3f})")
                if "selection" in block:
                    print(f"  selected: {', '.join(block['selection']['selected'])}")


if __name__ == "__main__":
    main()
