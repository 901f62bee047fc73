"""Bit-string codecs for channel payloads.

Layouts (all big-endian, MSB first):

* image: 16-bit width, 16-bit height, then ``width*height`` pixel bits in
  row-major order, ``1`` = dark.
* GPS pair: latitude then longitude; each is one sign bit (``1`` = negative)
  followed by seven BCD nibbles holding ``DDDdddd`` (three integer digits,
  four fractional digits). 58 bits per pair.
* text: UTF-8 bytes, eight bits each.
"""
from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path


class PayloadError(ValueError):
    pass


class DimensionOverflow(PayloadError):
    pass


class TruncatedPayload(PayloadError):
    pass


class LengthMismatch(PayloadError):
    pass


class InvalidNibble(PayloadError):
    pass


class NonOctetLength(PayloadError):
    pass


def _check_bits(bits: str) -> None:
    if set(bits) - {"0", "1"}:
        raise PayloadError("bit-string may only contain 0 and 1")


# -- images -------------------------------------------------------------------

@dataclass(frozen=True)
class BitImage:
    width: int
    height: int
    pixels: tuple[int, ...]

    def __post_init__(self):
        if not (0 <= self.width <= 0xFFFF and 0 <= self.height <= 0xFFFF):
            raise DimensionOverflow(f"{self.width}x{self.height} exceeds 65535")
        if len(self.pixels) != self.width * self.height:
            raise LengthMismatch(f"{len(self.pixels)} pixels for {self.width}x{self.height}")
        if any(p not in (0, 1) for p in self.pixels):
            raise PayloadError("pixels must be 0 or 1")

    def rows(self) -> list[tuple[int, ...]]:
        w = self.width
        return [self.pixels[r * w:(r + 1) * w] for r in range(self.height)]


def encode_image(img: BitImage) -> str:
    if img.width > 0xFFFF or img.height > 0xFFFF:
        raise DimensionOverflow(f"{img.width}x{img.height} exceeds 65535")
    return f"{img.width:016b}{img.height:016b}" + "".join(map(str, img.pixels))


def decode_image(bits: str) -> BitImage:
    _check_bits(bits)
    if len(bits) < 32:
        raise TruncatedPayload(f"{len(bits)} bits < 32-bit header")
    width, height = int(bits[:16], 2), int(bits[16:32], 2)
    body = bits[32:]
    if len(body) != width * height:
        raise LengthMismatch(f"header {width}x{height} needs {width * height} pixel bits, got {len(body)}")
    return BitImage(width, height, tuple(int(b) for b in body))


def write_pbm(img: BitImage, path: str | Path) -> None:
    """Plain PBM (P1): ``P1``, ``width height``, then one text row per pixel row."""
    lines = ["P1", f"{img.width} {img.height}"]
    lines += [" ".join(map(str, row)) for row in img.rows()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_pbm(path: str | Path) -> BitImage:
    tokens = []
    for line in Path(path).read_text(encoding="ascii").splitlines():
        line = line.split("#", 1)[0]
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P1":
        raise PayloadError(f"{path}: not a plain PBM (P1) file")
    try:
        width, height = int(tokens[1]), int(tokens[2])
    except (IndexError, ValueError):
        raise PayloadError(f"{path}: bad PBM header") from None
    # P1 allows pixels without separating whitespace
    pixels = "".join(tokens[3:])
    if len(pixels) != width * height or set(pixels) - {"0", "1"}:
        raise LengthMismatch(f"{path}: expected {width * height} pixels")
    return BitImage(width, height, tuple(int(p) for p in pixels))


# -- GPS ----------------------------------------------------------------------

_E4 = Decimal("0.0001")


@dataclass(frozen=True)
class GpsCoord:
    """Coordinate pair stored in ten-thousandths of a degree."""

    lat_e4: int
    lon_e4: int

    def __post_init__(self):
        if abs(self.lat_e4) > 900000 or abs(self.lon_e4) > 1800000:
            raise PayloadError("latitude must be within ±90, longitude within ±180")

    @classmethod
    def from_degrees(cls, latitude, longitude) -> "GpsCoord":
        def e4(x):
            return int((Decimal(str(x)).quantize(_E4, rounding=ROUND_HALF_EVEN) / _E4))

        return cls(e4(latitude), e4(longitude))

    @property
    def latitude(self) -> Decimal:
        return Decimal(self.lat_e4) * _E4

    @property
    def longitude(self) -> Decimal:
        return Decimal(self.lon_e4) * _E4


def _encode_e4(value: int) -> str:
    digits = f"{abs(value):07d}"
    return ("1" if value < 0 else "0") + "".join(f"{int(d):04b}" for d in digits)


def _decode_e4(bits: str) -> int:
    value = 0
    for i in range(7):
        nib = int(bits[1 + 4 * i:5 + 4 * i], 2)
        if nib > 9:
            raise InvalidNibble(f"nibble {nib:04b} is not a decimal digit")
        value = value * 10 + nib
    return -value if bits[0] == "1" else value


def encode_gps(c: GpsCoord) -> str:
    return _encode_e4(c.lat_e4) + _encode_e4(c.lon_e4)


def decode_gps(bits: str) -> GpsCoord:
    _check_bits(bits)
    if len(bits) != 58:
        raise LengthMismatch(f"GPS pair needs 58 bits, got {len(bits)}")
    return GpsCoord(_decode_e4(bits[:29]), _decode_e4(bits[29:]))


# -- text ---------------------------------------------------------------------

def encode_text(s: str) -> str:
    return "".join(f"{b:08b}" for b in s.encode("utf-8"))


def decode_text(bits: str) -> str:
    _check_bits(bits)
    if len(bits) % 8:
        raise NonOctetLength(f"{len(bits)} bits is not a whole number of bytes")
    data = bytes(int(bits[i:i + 8], 2) for i in range(0, len(bits), 8))
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PayloadError(f"not valid UTF-8: {exc}") from None
