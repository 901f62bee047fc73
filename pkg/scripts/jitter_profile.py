"""Gap statistics and batching-band violations for every sensor and request class."""
import argparse

from sensormux import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--samples", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/jitter.csv")
    args = ap.parse_args()
    res = harness.run(harness.ExperimentConfig("jitter", samples=args.samples, seed=args.seed))
    harness.write_result(res, args.out)
    for r in res.rows:
        print(f"{r.device:<10}{r.sensor:<4}{r.request_class:<10}{r.period_us:>8} us  "
              f"rel.std {r.relative_std:7.4f}  band [{r.band_lo_us}, {r.band_hi_us}]  "
              f"violations {r.violations}  drops {r.drops}")


if __name__ == "__main__":
    main()
