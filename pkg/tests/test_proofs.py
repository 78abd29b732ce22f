from __future__ import annotations

import math
import random

import pytest
from conftest import ORIGIN, keys, make_beacons, make_poi

from witnessnet.crowdsense import Response
from witnessnet.geo import GeoPoint, haversine_distance, offset
from witnessnet.proofs import (
    BEACON,
    CHALLENGE_ANSWER,
    PEER_WITNESS,
    QR_TOKEN,
    Beacon,
    DegenerateGeometry,
    LocationClaim,
    MalformedSignature,
    ProofConfig,
    RangingReceipt,
    SocialProof,
    TrilaterationError,
    UnknownBeacon,
    UnknownProofKind,
    WitnessClaim,
    check_behavior_over_time,
    make_peer_witness,
    measure_ranges,
    qr_token,
    sign_claim,
    trilaterate,
    verify_location_claim,
    verify_social_proof,
)


class Presence:
    def __init__(self, times: dict[tuple[str, str], list[float]] | None = None):
        self.times = times or {}

    def presence_times(self, key, poi_id):
        return self.times.get((key, poi_id), [])


def beacon_claim(name: str, position: GeoPoint, beacons, *, claimed: GeoPoint | None = None,
                 time: float = 100.0, noise: float = 0.0, seed: int = 0) -> LocationClaim:
    k = keys(name)
    receipts = measure_ranges(position, beacons.values(), noise, random.Random(seed), time=time,
                              claimant=k.key)
    return LocationClaim(k.key, claimed or position, time, tuple(receipts), BEACON)


def grid_oracle(receipts, beacons, around: GeoPoint, half: int = 20) -> GeoPoint:
    best, best_cost = around, math.inf
    for dx in range(-half, half + 1):
        for dy in range(-half, half + 1):
            p = offset(around, dx, dy)
            cost = sum((haversine_distance(p, beacons[r.beacon_id].position) - r.measured_distance) ** 2
                       for r in receipts)
            if cost < best_cost:
                best, best_cost = p, cost
    return best


def test_measure_ranges_exact_byzantine_and_out_of_range():
    beacons = make_beacons(4, byzantine=(0,))
    p = offset(ORIGIN, 10, -5)
    receipts = {r.beacon_id: r for r in measure_ranges(p, beacons.values(), 0.0, random.Random(1))}
    for bid, b in beacons.items():
        true = haversine_distance(p, b.position)
        expected = true + (300.0 if b.byzantine else 0.0)
        assert receipts[bid].measured_distance == pytest.approx(expected, abs=1e-6)
    far = offset(ORIGIN, 50_000, 0)
    assert measure_ranges(far, beacons.values(), 0.0, random.Random(1)) == []


def test_trilateration_matches_grid_oracle():
    beacons = make_beacons(5)
    rng = random.Random(5)
    for trial in range(10):
        p = offset(ORIGIN, rng.uniform(-40, 40), rng.uniform(-40, 40))
        receipts = measure_ranges(p, beacons.values(), 0.3, random.Random(trial))
        fix, residual = trilaterate(receipts, beacons)
        oracle = grid_oracle(receipts, beacons, p, half=3)
        assert haversine_distance(fix, oracle) <= 1.0
        assert haversine_distance(fix, p) <= 2.0
        assert residual < 1.0


def test_trilateration_exact_ranges_has_zero_residual():
    beacons = make_beacons(4)
    p = offset(ORIGIN, 12, 7)
    fix, residual = trilaterate(measure_ranges(p, beacons.values(), 0.0, random.Random(0)), beacons)
    assert haversine_distance(fix, p) < 0.01
    assert residual < 1e-3


def test_collinear_beacons_are_degenerate():
    signer = keys("beacon:x")
    beacons = {f"c{i}": Beacon(f"c{i}", offset(ORIGIN, -300 + 200 * i, 0), 2000, signer.key, signer=signer)
               for i in range(4)}
    receipts = measure_ranges(offset(ORIGIN, 0, 0), beacons.values(), 0.0, random.Random(0))
    with pytest.raises(DegenerateGeometry):
        trilaterate(receipts, beacons)


def test_too_few_receipts():
    beacons = make_beacons(4)
    receipts = measure_ranges(ORIGIN, beacons.values(), 0.0, random.Random(0))[:2]
    with pytest.raises(TrilaterationError):
        trilaterate(receipts, beacons)


def test_single_byzantine_among_four_inflates_residual():
    beacons = make_beacons(4, byzantine=(2,))
    receipts = measure_ranges(ORIGIN, beacons.values(), 0.0, random.Random(0))
    _, residual = trilaterate(receipts, beacons)
    assert residual > 10.0


def test_five_receipts_tolerate_one_byzantine():
    beacons = make_beacons(5, byzantine=(3,))
    poi = make_poi(proof_mode="beacon")
    verdict = verify_location_claim(beacon_claim("alice", ORIGIN, beacons, noise=0.3), poi, beacons)
    assert verdict.accepted
    assert verdict.detail["excluded"] == ["b4"]


def test_four_receipts_with_byzantine_are_rejected():
    beacons = make_beacons(4, byzantine=(1,))
    poi = make_poi(proof_mode="beacon")
    verdict = verify_location_claim(beacon_claim("alice", ORIGIN, beacons), poi, beacons)
    assert verdict.reason == "insufficient_consistent_receipts"


def test_beacon_verdict_reasons():
    beacons = make_beacons(5)
    poi = make_poi(proof_mode="beacon")
    three = dict(list(beacons.items())[:3])
    assert verify_location_claim(beacon_claim("a", ORIGIN, three), poi, beacons).reason == "insufficient_receipts"
    outside = offset(ORIGIN, 150, 0)
    assert verify_location_claim(beacon_claim("a", outside, beacons), poi, beacons).reason == "outside_fence"
    spoofed = beacon_claim("a", offset(ORIGIN, 0, -40), beacons, claimed=ORIGIN)
    assert verify_location_claim(spoofed, poi, beacons).reason == "position_mismatch"
    stale = beacon_claim("a", ORIGIN, beacons)
    stale = LocationClaim(stale.claimant, stale.claimed_position, stale.time + 60, stale.receipts, BEACON)
    assert verify_location_claim(stale, poi, beacons).reason == "stale_receipt"
    other = beacon_claim("a", ORIGIN, beacons)
    stolen = LocationClaim(keys("mallory").key, ORIGIN, other.time, other.receipts, BEACON)
    assert verify_location_claim(stolen, poi, beacons).reason == "receipt_not_bound"


def test_tampered_and_unknown_receipts():
    beacons = make_beacons(5)
    poi = make_poi(proof_mode="beacon")
    claim = beacon_claim("a", ORIGIN, beacons)
    r0 = claim.receipts[0]
    forged = RangingReceipt(r0.beacon_id, r0.claimant, r0.measured_distance + 5, r0.timestamp, r0.signature)
    tampered = LocationClaim(claim.claimant, ORIGIN, claim.time, (forged, *claim.receipts[1:]), BEACON)
    assert verify_location_claim(tampered, poi, beacons).reason == "bad_receipt_signature"
    with pytest.raises(UnknownBeacon):
        verify_location_claim(claim, poi, dict(list(beacons.items())[1:]))
    junk = RangingReceipt(r0.beacon_id, r0.claimant, r0.measured_distance, r0.timestamp, "zz")
    with pytest.raises(MalformedSignature):
        verify_location_claim(LocationClaim(claim.claimant, ORIGIN, claim.time, (junk,), BEACON), poi, beacons)


def test_gps_oracle_fence_check():
    poi = make_poi()
    k = keys("a").key
    assert verify_location_claim(LocationClaim(k, offset(ORIGIN, 59, 0), 1.0), poi, {}).accepted
    assert verify_location_claim(LocationClaim(k, offset(ORIGIN, 61, 0), 1.0), poi, {}).reason == "outside_fence"


def test_behavior_over_time():
    k = keys("a").key
    history = [(0.0, ORIGIN)]
    walk = LocationClaim(k, offset(ORIGIN, 14, 0), 10.0)
    jump = LocationClaim(k, offset(ORIGIN, 1000, 0), 10.0)
    assert check_behavior_over_time(history, walk).accepted
    verdict = check_behavior_over_time(history, jump)
    assert verdict.reason == "teleport"
    assert verdict.detail["speed"] == pytest.approx(100.0, rel=1e-3)
    assert check_behavior_over_time([], jump).accepted


def test_challenge_answer_normalisation():
    poi = make_poi(challenge_answer="Fountain")
    registry = Presence()
    ok = verify_social_proof(SocialProof(CHALLENGE_ANSWER, " fountain "), poi, registry, claimant="a", claim_time=0)
    bad = verify_social_proof(SocialProof(CHALLENGE_ANSWER, "statue"), poi, registry, claimant="a", claim_time=0)
    assert ok.accepted and bad.reason == "wrong_answer"


def test_qr_tokens_rotate():
    poi = make_poi(qr_secret="s3cret")
    cfg = ProofConfig(qr_window=300)
    t = 1000.0
    window = int(t // 300)
    current = SocialProof(QR_TOKEN, qr_token("s3cret", poi.id, window))
    old = SocialProof(QR_TOKEN, qr_token("s3cret", poi.id, window - 2))
    wrong = SocialProof(QR_TOKEN, qr_token("other", poi.id, window))
    check = lambda sp: verify_social_proof(sp, poi, Presence(), claimant="a", claim_time=t, cfg=cfg)  # noqa: E731
    assert check(current).accepted
    assert check(old).reason == "stale_token"
    assert check(wrong).reason == "invalid_token"


def test_peer_witness():
    poi = make_poi()
    alice, bob = keys("alice"), keys("bob")
    registry = Presence({(bob.key, poi.id): [90.0]})
    proof = make_peer_witness(bob, alice.key, poi.id, 100.0)
    assert verify_social_proof(proof, poi, registry, claimant=alice.key, claim_time=100.0).accepted
    absent = verify_social_proof(proof, poi, Presence(), claimant=alice.key, claim_time=100.0)
    assert absent.reason == "witness_not_present"
    selfie = make_peer_witness(alice, alice.key, poi.id, 100.0)
    assert verify_social_proof(selfie, poi, registry, claimant=alice.key, claim_time=100.0).reason == "self_witness"
    forged = SocialProof(PEER_WITNESS, proof.payload, bob.key)
    moved = verify_social_proof(forged, poi, registry, claimant=keys("carol").key, claim_time=100.0)
    assert moved.reason == "bad_witness_signature"
    with pytest.raises(UnknownProofKind):
        verify_social_proof(SocialProof("selfie", "x"), poi, registry, claimant=alice.key, claim_time=1.0)


def test_witness_claim_signature_and_round_trip():
    alice = keys("alice")
    location = LocationClaim(alice.key, ORIGIN, 5.0)
    claim = sign_claim(alice, location, [], "poi", "asset", [Response(alice.key, "poi", "q", 3, 5.0)], "n1")
    assert claim.signature_valid()
    restored = WitnessClaim.from_dict(claim.to_dict())
    assert restored == claim and restored.digest() == claim.digest()
    tampered = WitnessClaim(claim.location, claim.social, "other", claim.asset_id, claim.answers, claim.nonce,
                            claim.signature)
    assert not tampered.signature_valid()
