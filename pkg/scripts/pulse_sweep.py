"""Edit distance and bit rate across the pulse-width grid, every device and sensor.

Writes ``<out>`` (one row per device/sensor/width) and ``<out>.trials.csv``.
"""
import argparse

from sensormux import harness


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--policy", default="max")
    ap.add_argument("--full-range", action="store_true", help="random lengths 64-256 instead of 64")
    ap.add_argument("--out", default="results/pulse_sweep.csv")
    args = ap.parse_args()
    cfg = harness.ExperimentConfig("sweep", trials=args.trials, seed=args.seed, policy=args.policy,
                                   bits=(64, 256) if args.full_range else (64, 64), out=args.out)
    res = harness.run(cfg)
    agg, raw = harness.write_result(res, args.out)
    for r in res.rows:
        rate = "-" if r.failures == r.trials else f"{r.median_bit_rate_bps:.2f}"
        print(f"{r.device:<10}{r.sensor:<4}{r.pulse_width_ms:>6.0f} ms  ED {r.mean_edit_distance:6.2f}  "
              f"fail {r.failures:>3}/{r.trials}  {rate} bps")
    print(f"wrote {agg}, {raw}")


if __name__ == "__main__":
    main()
