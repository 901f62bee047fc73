"""Detection rate and mean latency per device, sensor and SDK rate constant."""
import argparse
import math

from sensormux import harness
from sensormux.fingerprint import CONSTANTS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--include-red", action="store_true")
    ap.add_argument("--out", default="results/constants.csv")
    args = ap.parse_args()
    cfg = harness.ExperimentConfig("constants", trials=args.trials, seed=args.seed, include_red=args.include_red)
    res = harness.run(cfg)
    harness.write_result(res, args.out)
    cells = {(r.device, r.sensor, r.constant): r for r in res.rows}
    for device in cfg.profiles:
        print(f"\n{device}: mean latency ms (detection rate)")
        print("      " + "".join(f"{c.value:>16}" for c in CONSTANTS))
        for sensor in sorted({r.sensor for r in res.rows if r.device == device}):
            line = f"{sensor:<6}"
            for c in CONSTANTS:
                r = cells.get((device, sensor, c.value))
                if r is None or math.isnan(r.mean_latency_ms):
                    line += f"{'-':>16}"
                else:
                    line += f"{r.mean_latency_ms:>9.1f} ({r.detection_rate:.2f})"
            print(line)
    print(f"\n{res.total} interactions, {res.failures} missed")


if __name__ == "__main__":
    main()
