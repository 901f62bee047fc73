"""Send a 1-bit image over the simulated channel and write what arrives.

Without ``--image`` a small built-in glyph is sent.
"""
import argparse

from sensormux.covert import channel_params, run_channel
from sensormux.payload import BitImage, decode_image, encode_image, read_pbm, write_pbm
from sensormux.sensorstack import load_profile

GLYPH = [
    "0111110",
    "1000001",
    "1010101",
    "1000001",
    "1011101",
    "1000001",
    "0111110",
]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--image", help="plain PBM (P1) input")
    ap.add_argument("--profile", default="poco_f1")
    ap.add_argument("--sensor", default="MF")
    ap.add_argument("--pulse-ms", type=float, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/received.pbm")
    args = ap.parse_args()
    if args.image:
        img = read_pbm(args.image)
    else:
        img = BitImage(7, 7, tuple(int(c) for row in GLYPH for c in row))
    bits = encode_image(img)
    params = channel_params(args.profile, args.sensor, round(args.pulse_ms * 1000))
    rep = run_channel(bits, params, load_profile(args.profile), seed=args.seed)
    print(f"{len(bits)} bits in {rep.duration_us / 1e6:.1f} s simulated ({rep.bit_rate_bps:.2f} bps), "
          f"edit distance {rep.edit_distance}")
    got = decode_image(rep.received)
    write_pbm(got, args.out)
    for row in got.rows():
        print("".join("#" if p else "." for p in row))
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
