"""Bit rate and error at the reference pulse widths for a few sensors."""
import argparse

from sensormux import harness

CELLS = [
    ("poco_f1", "MF", 100),
    ("poco_f1", "AC", 150),
    ("pixel_4a", "AC", 150),
    ("pixel_4a", "GR", 150),
    ("poco_f1", "LA", 350),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--bits", type=int, nargs=2, default=(64, 64), metavar=("LO", "HI"))
    args = ap.parse_args()
    print(f"{'device':<10}{'sensor':<8}{'w (ms)':>7}{'mean ED':>9}{'bps':>7}")
    for device, sensor, w in CELLS:
        cfg = harness.ExperimentConfig("sweep", profiles=(device,), sensors=(sensor,), grid_ms=(w,),
                                       trials=args.trials, seed=args.seed, bits=args.bits)
        [row] = harness.run(cfg).rows
        print(f"{device:<10}{sensor:<8}{w:>7}{row.mean_edit_distance:>9.2f}{row.median_bit_rate_bps:>7.2f}")


if __name__ == "__main__":
    main()
