"""Spherical-earth geodesy, geofence containment and geohash encoding."""

from __future__ import annotations

import math
from dataclasses import dataclass

EARTH_RADIUS_M = 6_371_000.0

_BASE32 = "0123456789bcdefghjkmnpqrstuvwxyz"
_DECODE = {c: i for i, c in enumerate(_BASE32)}


class GeoError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class GeoPoint:
    lat: float
    lon: float

    def __post_init__(self) -> None:
        if not (-90.0 <= self.lat <= 90.0):
            raise GeoError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise GeoError(f"longitude out of range: {self.lon}")

    def to_list(self) -> list[float]:
        # 8 fractional digits: ~1 mm, comfortably above the 6-digit floor.
        return [round(self.lat, 8), round(self.lon, 8)]

    @classmethod
    def from_list(cls, pair) -> "GeoPoint":
        lat, lon = pair
        return cls(float(lat), float(lon))


@dataclass(frozen=True)
class Circle:
    center: GeoPoint
    radius: float

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise GeoError(f"circle radius must be positive: {self.radius}")


@dataclass(frozen=True)
class Ellipse:
    center: GeoPoint
    semi_major: float
    semi_minor: float
    orientation: float = 0.0  # degrees clockwise from north

    def __post_init__(self) -> None:
        if not (self.semi_major >= self.semi_minor > 0):
            raise GeoError("ellipse requires semi_major >= semi_minor > 0")
        if not (0.0 <= self.orientation < 360.0):
            raise GeoError(f"orientation out of [0, 360): {self.orientation}")


Geofence = Circle | Ellipse


def haversine_distance(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(a.lat), math.radians(b.lat)
    dphi = phi2 - phi1
    dlmb = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


def to_local(p: GeoPoint, origin: GeoPoint) -> tuple[float, float]:
    """Equirectangular projection about ``origin``: (east, north) in meters."""
    x = EARTH_RADIUS_M * math.radians(p.lon - origin.lon) * math.cos(math.radians(origin.lat))
    y = EARTH_RADIUS_M * math.radians(p.lat - origin.lat)
    return x, y


def from_local(x: float, y: float, origin: GeoPoint) -> GeoPoint:
    lat = origin.lat + math.degrees(y / EARTH_RADIUS_M)
    lon = origin.lon + math.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(origin.lat))))
    return GeoPoint(lat, lon)


def offset(p: GeoPoint, east: float, north: float) -> GeoPoint:
    """Point displaced by (east, north) meters on the tangent plane at ``p``."""
    return from_local(east, north, p)


def centroid(points) -> GeoPoint:
    points = list(points)
    return GeoPoint(
        sum(p.lat for p in points) / len(points),
        sum(p.lon for p in points) / len(points),
    )


def inside_geofence(p: GeoPoint, fence: Geofence) -> bool:
    """Boundary-inclusive containment test."""
    if isinstance(fence, Circle):
        return haversine_distance(p, fence.center) <= fence.radius
    x, y = to_local(p, fence.center)
    # Rotate by -orientation so the major axis lies along local north.
    theta = math.radians(fence.orientation)
    along = x * math.sin(theta) + y * math.cos(theta)
    across = x * math.cos(theta) - y * math.sin(theta)
    return (along / fence.semi_major) ** 2 + (across / fence.semi_minor) ** 2 <= 1.0


def fence_to_dict(fence: Geofence) -> dict:
    if isinstance(fence, Circle):
        return {"circle": {"center": fence.center.to_list(), "radius": fence.radius}}
    return {
        "ellipse": {
            "center": fence.center.to_list(),
            "semi_major": fence.semi_major,
            "semi_minor": fence.semi_minor,
            "orientation": fence.orientation,
        }
    }


def fence_from_dict(data: dict, default_center: GeoPoint | None = None) -> Geofence:
    if "circle" in data:
        spec = data["circle"]
        center = GeoPoint.from_list(spec["center"]) if "center" in spec else default_center
        if center is None:
            raise GeoError("circle fence without center")
        return Circle(center, float(spec["radius"]))
    if "ellipse" in data:
        spec = data["ellipse"]
        center = GeoPoint.from_list(spec["center"]) if "center" in spec else default_center
        if center is None:
            raise GeoError("ellipse fence without center")
        return Ellipse(
            center,
            float(spec["semi_major"]),
            float(spec["semi_minor"]),
            float(spec.get("orientation", 0.0)),
        )
    raise GeoError(f"unknown fence variant: {sorted(data)}")


@dataclass(frozen=True)
class Geohash:
    code: str

    @property
    def precision(self) -> int:
        return len(self.code)

    def __str__(self) -> str:
        return self.code


def geohash_encode(p: GeoPoint, precision: int = 9) -> Geohash:
    if not 1 <= precision <= 12:
        raise GeoError(f"geohash precision must be in [1, 12], got {precision}")
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    chars = []
    bit, ch, even = 0, 0, True
    while len(chars) < precision:
        if even:
            mid = (lon_lo + lon_hi) / 2
            if p.lon >= mid:
                ch = (ch << 1) | 1
                lon_lo = mid
            else:
                ch <<= 1
                lon_hi = mid
        else:
            mid = (lat_lo + lat_hi) / 2
            if p.lat >= mid:
                ch = (ch << 1) | 1
                lat_lo = mid
            else:
                ch <<= 1
                lat_hi = mid
        even = not even
        bit += 1
        if bit == 5:
            chars.append(_BASE32[ch])
            bit, ch = 0, 0
    return Geohash("".join(chars))


def geohash_bounds(g: Geohash | str) -> tuple[float, float, float, float]:
    """(lat_min, lat_max, lon_min, lon_max) of the cell."""
    code = g.code if isinstance(g, Geohash) else g
    lat_lo, lat_hi = -90.0, 90.0
    lon_lo, lon_hi = -180.0, 180.0
    even = True
    for c in code:
        try:
            value = _DECODE[c]
        except KeyError:
            raise GeoError(f"invalid geohash character {c!r}") from None
        for shift in range(4, -1, -1):
            on = (value >> shift) & 1
            if even:
                mid = (lon_lo + lon_hi) / 2
                lon_lo, lon_hi = (mid, lon_hi) if on else (lon_lo, mid)
            else:
                mid = (lat_lo + lat_hi) / 2
                lat_lo, lat_hi = (mid, lat_hi) if on else (lat_lo, mid)
            even = not even
    return lat_lo, lat_hi, lon_lo, lon_hi


def geohash_decode(g: Geohash | str) -> GeoPoint:
    """Cell center."""
    lat_lo, lat_hi, lon_lo, lon_hi = geohash_bounds(g)
    return GeoPoint((lat_lo + lat_hi) / 2, (lon_lo + lon_hi) / 2)
