"""Witness-presence claims and their local verification.

Location proofs come in two flavours. ``gps_oracle`` trusts the claimed
position and only checks the fence. ``beacon`` mode carries signed
time-of-flight ranging receipts; the verifier trilaterates them, tolerates
up to ``f`` Byzantine beacons when ``n >= 3f + 1`` and at least four
receipts remain, and compares the solved position to the claim.
"""

from __future__ import annotations

import hashlib
import hmac
import itertools
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import crypto
from .crowdsense import PointOfInterest, Response
from .crypto import KeyPair, SignatureFormatError
from .geo import GeoPoint, centroid, from_local, haversine_distance, inside_geofence, to_local

SPEED_OF_LIGHT = 3e8
MIN_BEACON_RECEIPTS = 4
# Smallest accepted ratio of the anchor layout's principal spreads.
COLLINEAR_TOL = 1e-3

GPS_ORACLE = "gps_oracle"
BEACON = "beacon"

CHALLENGE_ANSWER = "challenge_answer"
QR_TOKEN = "qr_token"
PEER_WITNESS = "peer_witness"
SOCIAL_KINDS = (CHALLENGE_ANSWER, QR_TOKEN, PEER_WITNESS)


class ProofError(ValueError):
    """A claim that cannot be verified at all (as opposed to one that fails)."""

    reason = "proof_error"


class UnknownBeacon(ProofError):
    reason = "unknown_beacon"


class MalformedSignature(ProofError):
    reason = "malformed_signature"


class UnknownProofKind(ProofError):
    reason = "unknown_proof_kind"


class TrilaterationError(ValueError):
    pass


class DegenerateGeometry(TrilaterationError):
    pass


@dataclass(frozen=True)
class ProofConfig:
    residual_tol: float = 5.0
    position_tol: float = 10.0
    max_speed: float = 50.0
    qr_window: float = 300.0
    witness_window: float = 600.0
    receipt_window: float = 5.0

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "ProofConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown tolerance keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None
    detail: dict = field(default_factory=dict, compare=False)

    @classmethod
    def accept(cls, **detail) -> "Verdict":
        return cls(True, None, detail)

    @classmethod
    def reject(cls, reason: str, **detail) -> "Verdict":
        return cls(False, reason, detail)

    def __bool__(self) -> bool:
        return self.accepted


@dataclass(frozen=True)
class Beacon:
    id: str
    position: GeoPoint
    comm_range: float
    key: str
    clock_offset: float = 0.0
    byzantine: bool = False
    operator: str | None = None
    signer: KeyPair | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        if not self.comm_range > 0:
            raise ValueError(f"beacon {self.id}: comm_range must be positive")

    def public(self) -> dict:
        return {
            "id": self.id,
            "position": self.position.to_list(),
            "comm_range": self.comm_range,
            "key": self.key,
            "operator": self.operator,
        }

    @classmethod
    def from_public(cls, d: Mapping) -> "Beacon":
        return cls(d["id"], GeoPoint.from_list(d["position"]), float(d["comm_range"]), d["key"],
                   operator=d.get("operator"))


@dataclass(frozen=True)
class RangingReceipt:
    beacon_id: str
    claimant: str
    measured_distance: float
    timestamp: float
    signature: str

    def body(self) -> dict:
        return {
            "beacon": self.beacon_id,
            "claimant": self.claimant,
            "distance": float(self.measured_distance),
            "timestamp": float(self.timestamp),
        }

    def to_dict(self) -> dict:
        return {**self.body(), "signature": self.signature}

    @classmethod
    def from_dict(cls, d: Mapping) -> "RangingReceipt":
        return cls(d["beacon"], d["claimant"], float(d["distance"]), float(d["timestamp"]), d["signature"])


@dataclass(frozen=True)
class LocationClaim:
    claimant: str
    claimed_position: GeoPoint
    time: float
    receipts: tuple[RangingReceipt, ...] = ()
    mode: str = GPS_ORACLE

    def __post_init__(self) -> None:
        if self.mode not in (GPS_ORACLE, BEACON):
            raise ValueError(f"unknown location mode {self.mode!r}")

    def to_dict(self) -> dict:
        return {
            "claimant": self.claimant,
            "position": self.claimed_position.to_list(),
            "time": float(self.time),
            "receipts": [r.to_dict() for r in self.receipts],
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "LocationClaim":
        return cls(
            d["claimant"],
            GeoPoint.from_list(d["position"]),
            float(d["time"]),
            tuple(RangingReceipt.from_dict(r) for r in d["receipts"]),
            d["mode"],
        )


@dataclass(frozen=True)
class SocialProof:
    kind: str
    payload: str
    witness: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "payload": self.payload, "witness": self.witness}

    @classmethod
    def from_dict(cls, d: Mapping) -> "SocialProof":
        return cls(d["kind"], d["payload"], d.get("witness"))


@dataclass(frozen=True)
class WitnessClaim:
    location: LocationClaim
    social: tuple[SocialProof, ...]
    poi_id: str
    asset_id: str
    answers: tuple[Response, ...]
    nonce: str
    signature: str = ""

    @property
    def claimant(self) -> str:
        return self.location.claimant

    @property
    def time(self) -> float:
        return self.location.time

    def body(self) -> dict:
        return {
            "location": self.location.to_dict(),
            "social": [s.to_dict() for s in self.social],
            "poi": self.poi_id,
            "asset": self.asset_id,
            "answers": [r.to_dict() for r in self.answers],
            "nonce": self.nonce,
        }

    def to_dict(self) -> dict:
        return {**self.body(), "signature": self.signature}

    def digest(self) -> str:
        return crypto.digest(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "WitnessClaim":
        return cls(
            LocationClaim.from_dict(d["location"]),
            tuple(SocialProof.from_dict(s) for s in d["social"]),
            d["poi"],
            d["asset"],
            tuple(Response.from_dict(r) for r in d["answers"]),
            d["nonce"],
            d["signature"],
        )

    def signature_valid(self) -> bool:
        try:
            return crypto.verify(self.claimant, self.body(), self.signature)
        except SignatureFormatError:
            return False


def sign_claim(keys: KeyPair, location: LocationClaim, social: Iterable[SocialProof], poi_id: str,
               asset_id: str, answers: Iterable[Response], nonce: str) -> WitnessClaim:
    # Round-trip first so the signed body equals what a ledger replay will parse.
    claim = WitnessClaim.from_dict(
        {**WitnessClaim(location, tuple(social), poi_id, asset_id, tuple(answers), nonce).to_dict()}
    )
    return WitnessClaim(claim.location, claim.social, poi_id, asset_id, claim.answers, nonce,
                        keys.sign(claim.body()))


# --------------------------------------------------------------------------- ranging

def measure_ranges(
    true_position: GeoPoint,
    beacons: Iterable[Beacon],
    noise_std: float,
    rng: random.Random,
    *,
    time: float = 0.0,
    claimant: str = "",
) -> list[RangingReceipt]:
    """Signed time-of-flight receipts from every beacon in range."""
    receipts = []
    for b in sorted(beacons, key=lambda b: b.id):
        true_distance = haversine_distance(true_position, b.position)
        if true_distance > b.comm_range:
            continue
        measured = true_distance
        if noise_std > 0:
            measured += rng.gauss(0.0, noise_std)
        if b.byzantine:
            measured += b.clock_offset * SPEED_OF_LIGHT
        measured = max(0.0, measured)
        body = {
            "beacon": b.id,
            "claimant": claimant,
            "distance": float(measured),
            "timestamp": float(time + b.clock_offset),
        }
        if b.signer is None:
            raise ValueError(f"beacon {b.id} has no signing key")
        receipts.append(RangingReceipt(b.id, claimant, measured, body["timestamp"], b.signer.sign(body)))
    return receipts


def _rms(values: np.ndarray) -> float:
    return float(math.sqrt(float(np.mean(values**2))))


def trilaterate(
    receipts: Sequence[RangingReceipt],
    beacons: Mapping[str, Beacon],
    *,
    max_iter: int = 50,
    step_tol: float = 1e-4,
) -> tuple[GeoPoint, float]:
    """Least-squares position from ranging receipts.

    Gauss-Newton on the tangent plane at the beacon centroid, starting from
    the centroid. Ranges are compared against great-circle distances so that
    exact measurements give a zero residual. Returns (position, rms misfit).
    """
    if len(receipts) < 3:
        raise TrilaterationError(f"need >= 3 receipts, got {len(receipts)}")
    anchors = [beacons[r.beacon_id].position for r in receipts]
    ranges = np.array([r.measured_distance for r in receipts], dtype=float)
    origin = centroid(anchors)
    local = np.array([to_local(a, origin) for a in anchors])
    # Near-collinear anchors leave a mirror ambiguity whatever the start point.
    spread = np.linalg.svd(local - local.mean(axis=0), compute_uv=False)
    if spread[0] == 0 or spread[-1] / spread[0] < COLLINEAR_TOL:
        raise DegenerateGeometry("ranging beacons are collinear")

    def misfit(x: np.ndarray) -> np.ndarray:
        p = from_local(float(x[0]), float(x[1]), origin)
        return np.array([haversine_distance(p, a) for a in anchors]) - ranges

    x = np.zeros(2)
    r = misfit(x)
    cost = float(r @ r)
    for _ in range(max_iter):
        diff = x - local
        norms = np.linalg.norm(diff, axis=1)
        jac = np.divide(diff, norms[:, None], out=np.zeros_like(diff), where=norms[:, None] > 1e-9)
        sv = np.linalg.svd(jac, compute_uv=False)
        if sv[0] == 0 or sv[-1] / sv[0] < 1e-6:
            raise DegenerateGeometry("ranging geometry is rank deficient")
        step = -np.linalg.lstsq(jac, r, rcond=None)[0]
        # Backtrack when a full step overshoots.
        for _ in range(20):
            x_new = x + step
            r_new = misfit(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new <= cost or np.linalg.norm(step) < step_tol:
                break
            step = step / 2
        x, r, cost = x_new, r_new, cost_new
        if np.linalg.norm(step) < step_tol:
            return from_local(float(x[0]), float(x[1]), origin), _rms(r)
    raise TrilaterationError(f"no convergence after {max_iter} iterations")


# ----------------------------------------------------------------- location verdicts

def _check_receipts(claim: LocationClaim, beacons: Mapping[str, Beacon], cfg: ProofConfig) -> Verdict | None:
    seen = set()
    for rc in claim.receipts:
        beacon = beacons.get(rc.beacon_id)
        if beacon is None:
            raise UnknownBeacon(f"receipt from unknown beacon {rc.beacon_id!r}")
        if rc.beacon_id in seen:
            return Verdict.reject("duplicate_receipt", beacon=rc.beacon_id)
        seen.add(rc.beacon_id)
        try:
            ok = crypto.verify(beacon.key, rc.body(), rc.signature)
        except SignatureFormatError as exc:
            raise MalformedSignature(str(exc)) from exc
        if not ok:
            return Verdict.reject("bad_receipt_signature", beacon=rc.beacon_id)
        if rc.claimant != claim.claimant:
            return Verdict.reject("receipt_not_bound", beacon=rc.beacon_id)
        if abs(rc.timestamp - claim.time) > cfg.receipt_window:
            return Verdict.reject("stale_receipt", beacon=rc.beacon_id)
        if rc.measured_distance < 0:
            return Verdict.reject("negative_range", beacon=rc.beacon_id)
    return None


def consistent_subset(
    receipts: Sequence[RangingReceipt], beacons: Mapping[str, Beacon], residual_tol: float
) -> tuple[GeoPoint, float, tuple[str, ...]] | None:
    """Smallest exclusion set leaving a consistent fix, or None.

    Tries f = 0, 1, ... excluded receipts while ``n >= 3f + 1`` and at least
    four receipts remain; among subsets at the first workable f the lowest
    residual wins (ties broken by receipt order).
    """
    n = len(receipts)
    f = 0
    while n >= 3 * f + 1 and n - f >= MIN_BEACON_RECEIPTS:
        best = None
        for excluded in itertools.combinations(range(n), f):
            subset = [rc for i, rc in enumerate(receipts) if i not in excluded]
            try:
                position, residual = trilaterate(subset, beacons)
            except TrilaterationError:
                continue
            if residual <= residual_tol and (best is None or residual < best[1]):
                best = (position, residual, tuple(receipts[i].beacon_id for i in excluded))
        if best is not None:
            return best
        f += 1
    return None


def verify_location_claim(
    claim: LocationClaim,
    poi: PointOfInterest,
    beacons: Mapping[str, Beacon],
    cfg: ProofConfig = ProofConfig(),
) -> Verdict:
    if claim.mode == GPS_ORACLE:
        if claim.receipts:
            return Verdict.reject("unexpected_receipts")
        if not inside_geofence(claim.claimed_position, poi.fence):
            return Verdict.reject("outside_fence")
        return Verdict.accept(position=claim.claimed_position.to_list(), mode=GPS_ORACLE)

    bad = _check_receipts(claim, beacons, cfg)
    if bad is not None:
        return bad
    receipts = sorted(claim.receipts, key=lambda rc: rc.beacon_id)
    if len(receipts) < MIN_BEACON_RECEIPTS:
        return Verdict.reject("insufficient_receipts", count=len(receipts))
    fix = consistent_subset(receipts, beacons, cfg.residual_tol)
    if fix is None:
        return Verdict.reject("insufficient_consistent_receipts", count=len(receipts))
    position, residual, excluded = fix
    used = tuple(rc.beacon_id for rc in receipts if rc.beacon_id not in excluded)
    detail = dict(
        position=position.to_list(),
        residual=round(residual, 6),
        excluded=list(excluded),
        used=list(used),
        mode=BEACON,
    )
    if not inside_geofence(position, poi.fence):
        return Verdict.reject("outside_fence", **detail)
    if haversine_distance(position, claim.claimed_position) > cfg.position_tol:
        return Verdict.reject("position_mismatch", **detail)
    return Verdict.accept(**detail)


def check_behavior_over_time(
    history: Sequence[tuple[float, GeoPoint]],
    claim: LocationClaim,
    cfg: ProofConfig = ProofConfig(),
) -> Verdict:
    """Reject claims implying travel faster than ``cfg.max_speed``."""
    if not history:
        return Verdict.accept()
    last_time, last_position = history[-1]
    distance = haversine_distance(last_position, claim.claimed_position)
    dt = claim.time - last_time
    if distance == 0:
        return Verdict.accept(speed=0.0)
    speed = math.inf if dt <= 0 else distance / dt
    if speed > cfg.max_speed:
        return Verdict.reject("teleport", speed=speed if math.isfinite(speed) else -1.0)
    return Verdict.accept(speed=speed)


# -------------------------------------------------------------------- social proofs

class PresenceLookup(Protocol):
    def presence_times(self, key: str, poi_id: str) -> list[float]: ...


def qr_token(secret: str, poi_id: str, window: int) -> str:
    mac = hmac.new(secret.encode(), f"{poi_id}:{window}".encode(), hashlib.sha256)
    return mac.hexdigest()[:16]


def witness_statement(claimant: str, poi_id: str, time: float) -> dict:
    return {"witness_for": claimant, "poi": poi_id, "second": int(math.floor(time))}


def make_peer_witness(witness: KeyPair, claimant: str, poi_id: str, time: float) -> SocialProof:
    return SocialProof(PEER_WITNESS, witness.sign(witness_statement(claimant, poi_id, time)), witness.key)


_STALE_LOOKBACK = 64


def verify_social_proof(
    sp: SocialProof,
    poi: PointOfInterest,
    presence_registry: PresenceLookup,
    *,
    claimant: str,
    claim_time: float,
    cfg: ProofConfig = ProofConfig(),
) -> Verdict:
    if sp.kind not in SOCIAL_KINDS:
        raise UnknownProofKind(f"unknown social proof kind {sp.kind!r}")
    if not sp.payload:
        return Verdict.reject("empty_payload", kind=sp.kind)

    if sp.kind == CHALLENGE_ANSWER:
        expected = poi.challenge_answer
        if expected is None or sp.payload.strip().casefold() != expected.strip().casefold():
            return Verdict.reject("wrong_answer", kind=sp.kind)
        return Verdict.accept(kind=sp.kind)

    if sp.kind == QR_TOKEN:
        if poi.qr_secret is None:
            return Verdict.reject("invalid_token", kind=sp.kind)
        window = int(math.floor(claim_time / cfg.qr_window))
        if hmac.compare_digest(sp.payload, qr_token(poi.qr_secret, poi.id, window)):
            return Verdict.accept(kind=sp.kind)
        for age in range(1, _STALE_LOOKBACK + 1):
            if hmac.compare_digest(sp.payload, qr_token(poi.qr_secret, poi.id, window - age)):
                return Verdict.reject("stale_token", kind=sp.kind, age=age)
        return Verdict.reject("invalid_token", kind=sp.kind)

    # peer witness
    if not sp.witness or sp.witness == claimant:
        return Verdict.reject("self_witness", kind=sp.kind)
    try:
        ok = crypto.verify(sp.witness, witness_statement(claimant, poi.id, claim_time), sp.payload)
    except SignatureFormatError:
        ok = False
    if not ok:
        return Verdict.reject("bad_witness_signature", kind=sp.kind)
    times = presence_registry.presence_times(sp.witness, poi.id)
    if not any(abs(claim_time - t) <= cfg.witness_window for t in times):
        return Verdict.reject("witness_not_present", kind=sp.kind)
    return Verdict.accept(kind=sp.kind)
