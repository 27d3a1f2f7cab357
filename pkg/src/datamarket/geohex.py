"""Hexagonal geocoding (GeoHex v3 layout).

A point is projected to spherical Web-Mercator metres, snapped to a hexagonal
lattice whose cell size shrinks by a factor of three per level, and the
lattice coordinates are written as balanced-ternary digit pairs.  The first
three base-9 digits are packed into two letters, so a level ``L`` code is
``L + 2`` characters long (2..17).

Containment is decided by re-encoding the fine cell's centre at the coarse
level, never by string prefixes: hexagons do not nest exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import LevelOrderViolation, LevelOutOfRange, MalformedCode, PointOutOfBounds

KEY = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz"
# the two leading letters each encode a value below 30
LEAD = KEY[:30]
DIGITS = "012345678"

MAX_LEVEL = 15
MAX_LAT = 85.0511
H_BASE = 20037508.34
H_K = math.tan(math.radians(30.0))


@dataclass(frozen=True)
class GeoPoint:
    lat: float
    lon: float


@dataclass(frozen=True)
class Cell:
    center: GeoPoint
    level: int
    code: str
    x: int
    y: int


def level_of(code: str) -> int:
    return len(code) - 2


def hex_size(level: int) -> float:
    return H_BASE / 3.0 ** (level + 3)


def _to_metres(lat: float, lon: float) -> tuple[float, float]:
    x = lon * H_BASE / 180.0
    y = math.log(math.tan((90.0 + lat) * math.pi / 360.0)) / (math.pi / 180.0)
    return x, y * H_BASE / 180.0


def _to_degrees(x: float, y: float) -> tuple[float, float]:
    lon = x / H_BASE * 180.0
    lat = y / H_BASE * 180.0
    lat = 180.0 / math.pi * (2.0 * math.atan(math.exp(lat * math.pi / 180.0)) - math.pi / 2.0)
    return lat, lon


def _check_level(level: int) -> None:
    if not isinstance(level, int) or isinstance(level, bool) or not 0 <= level <= MAX_LEVEL:
        raise LevelOutOfRange(f"level must be an integer in 0..{MAX_LEVEL}, got {level!r}")


def _check_point(lat: float, lon: float) -> None:
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise PointOutOfBounds(f"non-finite coordinate ({lat}, {lon})")
    if not -MAX_LAT <= lat <= MAX_LAT or not -180.0 <= lon < 180.0:
        raise PointOutOfBounds(f"({lat}, {lon}) outside projectable bounds")


def _adjust(x: int, y: int, level: int) -> tuple[int, int]:
    """Fold lattice coordinates that fell past the antimeridian back onto the map."""
    max_steps = 3 ** (level + 2)
    steps = abs(x - y)
    if steps == max_steps and x > y:
        x, y = y, x
    elif steps > max_steps:
        dif = steps - max_steps
        dif_x = dif // 2
        dif_y = dif - dif_x
        if x > y:
            edge_x, edge_y = y + dif_y, x - dif_x
            x, y = edge_x + dif_x, edge_y - dif_y
        elif y > x:
            edge_x, edge_y = y - dif_y, x + dif_x
            x, y = edge_x - dif_x, edge_y + dif_y
    return x, y


def _lattice(mx: float, my: float, level: int) -> tuple[int, int]:
    """Snap Mercator metres to the nearest hexagon centre's lattice coordinates."""
    size = hex_size(level)
    unit_x = 6.0 * size
    unit_y = 6.0 * size * H_K
    pos_x = (mx + my / H_K) / unit_x
    pos_y = (my - H_K * mx) / unit_y
    x0 = math.floor(pos_x)
    y0 = math.floor(pos_y)
    qx = pos_x - x0
    qy = pos_y - y0
    x = _js_round(pos_x)
    y = _js_round(pos_y)
    if qy > -qx + 1:
        if qy < 2 * qx and qy > 0.5 * qx:
            x, y = x0 + 1, y0 + 1
    elif qy < -qx + 1:
        if qy > 2 * qx - 1 and qy < 0.5 * qx + 0.5:
            x, y = x0, y0
    return _adjust(x, y, level)


def _js_round(v: float) -> int:
    # round-half-up, not banker's rounding
    return math.floor(v + 0.5)


def _centre_metres(x: int, y: int, level: int) -> tuple[float, float]:
    size = hex_size(level)
    unit_x = 6.0 * size
    unit_y = 6.0 * size * H_K
    my = (H_K * x * unit_x + y * unit_y) / 2.0
    mx = (my - y * unit_y) / H_K
    return mx, my


def _code_from_lattice(x: int, y: int, level: int) -> str:
    mx, my = _centre_metres(x, y, level)
    lon = mx / H_BASE * 180.0
    max_steps = 3 ** (level + 2)
    if abs(x - y) == max_steps:
        if x > y:
            x, y = y, x
        lon = -180.0
    digits_x: list[int] = []
    digits_y: list[int] = []
    mod_x, mod_y = x, y
    for i in range(level + 3):
        p = 3 ** (level + 2 - i)
        half = (p + 1) // 2
        if mod_x >= half:
            digits_x.append(2)
            mod_x -= p
        elif mod_x <= -half:
            digits_x.append(0)
            mod_x += p
        else:
            digits_x.append(1)
        if mod_y >= half:
            digits_y.append(2)
            mod_y -= p
        elif mod_y <= -half:
            digits_y.append(0)
            mod_y += p
        else:
            digits_y.append(1)
        if i == 2 and (lon == -180.0 or lon >= 0):
            same_tail = digits_x[1] == digits_y[1] and digits_x[2] == digits_y[2]
            if digits_x[0] == 2 and digits_y[0] == 1 and same_tail:
                digits_x[0], digits_y[0] = 1, 2
            elif digits_x[0] == 1 and digits_y[0] == 0 and same_tail:
                digits_x[0], digits_y[0] = 0, 1
    nines = [3 * dx + dy for dx, dy in zip(digits_x, digits_y)]
    head = nines[0] * 100 + nines[1] * 10 + nines[2]
    return KEY[head // 30] + KEY[head % 30] + "".join(str(d) for d in nines[3:])


def _lattice_from_code(code: str) -> tuple[int, int, int]:
    if not isinstance(code, str):
        raise MalformedCode(f"code must be a string, got {type(code).__name__}")
    if not 2 <= len(code) <= MAX_LEVEL + 2:
        raise MalformedCode(f"code length must be 2..{MAX_LEVEL + 2}, got {len(code)}")
    a, b = code[0], code[1]
    if a not in LEAD or b not in LEAD:
        raise MalformedCode(f"bad leading characters in {code!r}")
    tail = code[2:]
    if any(ch not in DIGITS for ch in tail):
        raise MalformedCode(f"digits after the first two characters must be 0-8: {code!r}")
    level = len(code) - 2
    head = LEAD.index(a) * 30 + LEAD.index(b)
    if head > 888 or any(int(ch) > 8 for ch in f"{head:03d}"):
        raise MalformedCode(f"leading characters of {code!r} do not encode three base-9 digits")
    nines = f"{head:03d}" + tail
    # codes rewritten by the antimeridian rule in _code_from_lattice map back here
    if nines[0] in "15" and nines[1] not in "125" and nines[2] not in "125":
        nines = ("7" if nines[0] == "5" else "3") + nines[1:]
    x = y = 0
    for i, ch in enumerate(nines):
        p = 3 ** (level + 2 - i)
        dx, dy = divmod(int(ch), 3)
        x += (dx - 1) * p
        y += (dy - 1) * p
    x, y = _adjust(x, y, level)
    if _code_from_lattice(x, y, level) != code:
        raise MalformedCode(f"{code!r} is not the canonical code of any cell")
    return x, y, level


def _cell(x: int, y: int, level: int) -> Cell:
    mx, my = _centre_metres(x, y, level)
    lat, lon = _to_degrees(mx, my)
    if lon >= 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    return Cell(GeoPoint(lat, lon), level, _code_from_lattice(x, y, level), x, y)


def encode(point: GeoPoint | tuple[float, float], level: int) -> str:
    """Code of the level-``level`` hexagon containing ``point`` (lat, lon in degrees)."""
    lat, lon = (point.lat, point.lon) if isinstance(point, GeoPoint) else point
    _check_level(level)
    _check_point(float(lat), float(lon))
    mx, my = _to_metres(lat, lon)
    x, y = _lattice(mx, my, level)
    return _code_from_lattice(x, y, level)


def decode(code: str) -> Cell:
    x, y, level = _lattice_from_code(code)
    return _cell(x, y, level)


def is_valid(code: str) -> bool:
    try:
        _lattice_from_code(code)
    except MalformedCode:
        return False
    return True


def contains(coarse: str, fine: str) -> bool:
    """True iff the centre of ``fine``'s cell lies in ``coarse``'s cell."""
    cx, cy, coarse_level = _lattice_from_code(coarse)
    fx, fy, fine_level = _lattice_from_code(fine)
    if coarse_level > fine_level:
        raise LevelOrderViolation(f"{coarse!r} is finer than {fine!r}")
    if coarse_level == fine_level:
        return (cx, cy) == (fx, fy)
    centre = _cell(fx, fy, fine_level).center
    if abs(centre.lat) <= MAX_LAT:
        return encode(centre, coarse_level) == coarse
    # polar cells have centres past the latitude bound; locate them in metres
    mx, my = _centre_metres(fx, fy, fine_level)
    return _lattice(mx, my, coarse_level) == (cx, cy)


def spatial_filter(query: str, candidates: list[str]) -> list[str]:
    q_level = level_of(query)
    for c in candidates:
        if level_of(c) < q_level:
            raise LevelOrderViolation(f"candidate {c!r} is coarser than query {query!r}")
    return [c for c in candidates if contains(query, c)]
