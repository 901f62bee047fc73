"""Replay every app in the fingerprint database and summarise the matches."""
import argparse
from collections import Counter

from sensormux import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--db", help="app database TOML (bundled by default)")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/apps.csv")
    args = ap.parse_args()
    res = harness.run(harness.ExperimentConfig("apps", db=args.db, seed=args.seed))
    harness.write_result(res, args.out)
    for r in res.rows:
        print(f"{r.app:<32}{r.combo:<48}{r.outcome}")
    s = harness.app_summary(res.rows)
    n = len(res.rows) or 1
    print(f"\ndetected {s['detected']}, unique {s['unique']} ({s['unique'] / n:.1%}), "
          f"conflicting {s['conflicting']} ({s['conflicting'] / n:.1%})")
    print("by category:", dict(Counter(r.category for r in res.rows).most_common()))


if __name__ == "__main__":
    main()
