from __future__ import annotations

import math
import random

import pytest

from witnessnet.geo import (
    EARTH_RADIUS_M,
    Circle,
    Ellipse,
    GeoError,
    GeoPoint,
    fence_from_dict,
    fence_to_dict,
    geohash_bounds,
    geohash_decode,
    geohash_encode,
    haversine_distance,
    inside_geofence,
    offset,
)

ZURICH = GeoPoint(47.3769, 8.5417)


def cosine_law_distance(a: GeoPoint, b: GeoPoint) -> float:
    # Independent great-circle formula for cross-checking.
    p1, p2 = math.radians(a.lat), math.radians(b.lat)
    dl = math.radians(b.lon - a.lon)
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl)
    return EARTH_RADIUS_M * math.acos(max(-1.0, min(1.0, c)))


def reference_geohash(lat: float, lon: float, precision: int) -> str:
    alphabet = "0123456789bcdefghjkmnpqrstuvwxyz"
    bits = []
    lat_r, lon_r = [-90.0, 90.0], [-180.0, 180.0]
    for i in range(precision * 5):
        rng, v = (lon_r, lon) if i % 2 == 0 else (lat_r, lat)
        mid = (rng[0] + rng[1]) / 2
        if v >= mid:
            bits.append(1)
            rng[0] = mid
        else:
            bits.append(0)
            rng[1] = mid
    return "".join(alphabet[int("".join(map(str, bits[i:i + 5])), 2)] for i in range(0, len(bits), 5))


def random_point(rng: random.Random) -> GeoPoint:
    return GeoPoint(rng.uniform(-80, 80), rng.uniform(-179, 179))


def test_point_validation():
    with pytest.raises(GeoError):
        GeoPoint(91, 0)
    with pytest.raises(GeoError):
        GeoPoint(0, -180.5)
    assert GeoPoint.from_list(ZURICH.to_list()) == ZURICH


def test_haversine_identity_and_symmetry():
    a, b = ZURICH, GeoPoint(47.3779, 8.5403)
    assert haversine_distance(a, a) == 0.0
    assert haversine_distance(a, b) == haversine_distance(b, a)


def test_haversine_one_degree_of_longitude_at_equator():
    d = haversine_distance(GeoPoint(0, 0), GeoPoint(0, 1))
    assert d == pytest.approx(EARTH_RADIUS_M * math.pi / 180, rel=1e-12)
    assert d == pytest.approx(111_195, abs=1)


def test_haversine_matches_cosine_law():
    rng = random.Random(3)
    for _ in range(200):
        a, b = random_point(rng), random_point(rng)
        assert haversine_distance(a, b) == pytest.approx(cosine_law_distance(a, b), rel=1e-6, abs=1e-3)


def test_metric_axioms_on_sampled_triples():
    rng = random.Random(5)
    for _ in range(300):
        a, b, c = (random_point(rng) for _ in range(3))
        ab, bc, ac = haversine_distance(a, b), haversine_distance(b, c), haversine_distance(a, c)
        assert ab >= 0
        assert ac <= (ab + bc) * (1 + 1e-6)


def test_circle_center_boundary_and_outside():
    fence = Circle(ZURICH, 100.0)
    assert inside_geofence(ZURICH, fence)
    north = offset(ZURICH, 0, 150)
    assert haversine_distance(north, ZURICH) == pytest.approx(150, rel=1e-6)
    assert not inside_geofence(north, fence)
    # Boundary exactly at the radius counts as inside.
    edge = offset(ZURICH, 0, 100)
    exact = Circle(ZURICH, haversine_distance(edge, ZURICH))
    assert inside_geofence(edge, exact)


def test_ellipse_orientation():
    ellipse = Ellipse(ZURICH, 200, 50, 0.0)  # major axis north-south
    assert inside_geofence(offset(ZURICH, 0, 180), ellipse)
    assert not inside_geofence(offset(ZURICH, 180, 0), ellipse)
    rotated = Ellipse(ZURICH, 200, 50, 90.0)  # major axis east-west
    assert inside_geofence(offset(ZURICH, 180, 0), rotated)
    assert not inside_geofence(offset(ZURICH, 0, 180), rotated)
    assert inside_geofence(ZURICH, rotated)


def test_round_ellipse_agrees_with_circle():
    rng = random.Random(11)
    ellipse, circle = Ellipse(ZURICH, 120, 120, 37.0), Circle(ZURICH, 120)
    disagreements = 0
    for _ in range(2000):
        p = offset(ZURICH, rng.uniform(-200, 200), rng.uniform(-200, 200))
        d = haversine_distance(p, ZURICH)
        if abs(d - 120) < 0.05:
            continue  # projection vs great-circle differ by millimetres near the rim
        disagreements += inside_geofence(p, ellipse) != inside_geofence(p, circle)
    assert disagreements == 0


def test_fence_validation():
    with pytest.raises(GeoError):
        Circle(ZURICH, 0)
    with pytest.raises(GeoError):
        Ellipse(ZURICH, 10, 20)
    with pytest.raises(GeoError):
        Ellipse(ZURICH, 20, 10, 360)


def test_fence_dict_round_trip():
    for fence in (Circle(ZURICH, 50), Ellipse(ZURICH, 80, 30, 45)):
        assert fence_from_dict(fence_to_dict(fence)) == fence
    assert fence_from_dict({"circle": {"radius": 5}}, ZURICH) == Circle(ZURICH, 5)
    with pytest.raises(GeoError):
        fence_from_dict({"square": {}})


def test_geohash_known_values():
    assert str(geohash_encode(GeoPoint(0, 0), 1)) == "s"
    assert str(geohash_encode(GeoPoint(57.64911, 10.40744), 11)) == "u4pruydqqvj"


def test_geohash_matches_reference_and_nests():
    rng = random.Random(13)
    for _ in range(200):
        p = random_point(rng)
        codes = [str(geohash_encode(p, k)) for k in range(1, 13)]
        assert codes[-1] == reference_geohash(p.lat, p.lon, 12)
        for shorter, longer in zip(codes, codes[1:]):
            assert longer.startswith(shorter)


def test_geohash_round_trip_and_bounds():
    rng = random.Random(17)
    for _ in range(100):
        p = random_point(rng)
        for k in (1, 5, 9):
            g = geohash_encode(p, k)
            assert g.precision == k
            assert geohash_encode(geohash_decode(g), k) == g
            lat_lo, lat_hi, lon_lo, lon_hi = geohash_bounds(g)
            assert lat_lo <= p.lat <= lat_hi and lon_lo <= p.lon <= lon_hi


def test_geohash_points_one_metre_apart_share_precision_five_cell():
    rng = random.Random(19)
    shared = 0
    for _ in range(200):
        p = GeoPoint(rng.uniform(-60, 60), rng.uniform(-170, 170))
        lat_lo, lat_hi, lon_lo, lon_hi = geohash_bounds(geohash_encode(p, 5))
        q = offset(p, 1, 0)
        if lon_lo + 1e-4 < q.lon < lon_hi - 1e-4:
            shared += 1
            assert geohash_encode(q, 5) == geohash_encode(p, 5)
    assert shared > 150
    assert geohash_encode(ZURICH, 5) == geohash_encode(offset(ZURICH, 1, 0), 5)


@pytest.mark.parametrize("precision", [0, 13])
def test_geohash_precision_range(precision):
    with pytest.raises(GeoError):
        geohash_encode(ZURICH, precision)


def test_geohash_rejects_bad_characters():
    with pytest.raises(GeoError):
        geohash_bounds("abc")  # 'a' is not in the alphabet
