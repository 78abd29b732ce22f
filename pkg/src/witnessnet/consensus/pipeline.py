"""Claim verification pipeline and stake-weighted producer selection."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .. import crypto
from ..crowdsense import InadmissibleAnswer
from ..crypto import KeyPair, SignatureFormatError
from ..proofs import (
    BEACON,
    LocationClaim,
    ProofError,
    Verdict,
    WitnessClaim,
    check_behavior_over_time,
    verify_location_claim,
    verify_social_proof,
)
from .state import (
    TREASURY,
    ConsensusError,
    LedgerState,
    PresenceRecord,
    Validator,
    ValidatorRole,
)


class UnservedPoi(ConsensusError):
    pass


class NoActiveValidators(ConsensusError):
    pass


@dataclass(frozen=True)
class Attestation:
    validator: str
    signature: str

    def to_dict(self) -> dict:
        return {"validator": self.validator, "signature": self.signature}

    @classmethod
    def from_dict(cls, d) -> "Attestation":
        return cls(d["validator"], d["signature"])


def attest(keys: KeyPair, claim: WitnessClaim) -> Attestation:
    return Attestation(keys.key, keys.sign({"attest": claim.digest()}))


@dataclass(frozen=True)
class VerdictRecord:
    claim: WitnessClaim
    attestations: tuple[Attestation, ...]
    accepted: bool
    reason: str | None
    detail: dict = field(default_factory=dict)
    fee: int = 0
    reward: int = 0

    def outcome(self) -> dict:
        return {
            "accepted": self.accepted,
            "reason": self.reason,
            "detail": self.detail,
            "fee": self.fee,
            "reward": self.reward,
        }

    def to_dict(self) -> dict:
        return {
            "claim": self.claim.to_dict(),
            "attestations": [a.to_dict() for a in self.attestations],
            **self.outcome(),
        }

    @classmethod
    def from_dict(cls, d) -> "VerdictRecord":
        return cls(
            WitnessClaim.from_dict(d["claim"]),
            tuple(Attestation.from_dict(a) for a in d["attestations"]),
            bool(d["accepted"]),
            d["reason"],
            d["detail"],
            int(d["fee"]),
            int(d["reward"]),
        )


def claim_order(claim: WitnessClaim) -> tuple:
    return (claim.time, claim.claimant, claim.nonce)


def eligible_verifiers(claim: WitnessClaim, state: LedgerState) -> list[Validator]:
    """Active validators allowed to attest ``claim``, sorted by key."""
    min_stake = state.economics.min_stake
    chosen = []
    for v in state.active_validators():
        if v.role is ValidatorRole.FULL:
            chosen.append(v)
        elif v.role is ValidatorRole.LOCATION and claim.poi_id in v.served_pois:
            chosen.append(v)
        elif v.role is ValidatorRole.SOCIAL and claim.social and v.stake >= min_stake:
            chosen.append(v)
    if not chosen:
        raise UnservedPoi(f"no validator serves poi {claim.poi_id!r}")
    return chosen


def select_producer(validators: Iterable[Validator], height: int, seed: int | str) -> Validator:
    """Stake-weighted draw keyed by digest(seed, height)."""
    pool = sorted((v for v in validators if v.active and v.stake > 0), key=lambda v: v.key)
    if not pool:
        raise NoActiveValidators("no active staked validators")
    total = sum(v.stake for v in pool)
    draw = int.from_bytes(hashlib.sha256(crypto.canonical(["producer", str(seed), height])).digest(), "big")
    point = draw % total
    for v in pool:
        point -= v.stake
        if point < 0:
            return v
    raise AssertionError("unreachable")


def _reject(claim, attestations, reason, **detail) -> VerdictRecord:
    return VerdictRecord(claim, tuple(attestations), False, reason, detail)


def verify_claim_pipeline(
    claim: WitnessClaim, attestations: Sequence[Attestation], state: LedgerState
) -> VerdictRecord:
    """Run every check in order; the first failure decides the verdict.

    Pure with respect to ``state``; :func:`apply_verdict` performs the
    accompanying state changes.
    """
    cfg = state.config
    econ = cfg.economics
    attestations = tuple(attestations)

    # (1) claimant signature and nonce freshness
    if not claim.signature_valid():
        return _reject(claim, attestations, "bad_claim_signature")
    if claim.nonce in state.nonces.get(claim.claimant, ()):
        return _reject(claim, attestations, "replay")
    poi = state.pois.get(claim.poi_id)
    if poi is None:
        return _reject(claim, attestations, "unknown_poi")

    # (2) verifier set and attestation signatures
    try:
        eligible = {v.key: v for v in eligible_verifiers(claim, state)}
    except UnservedPoi:
        return _reject(claim, attestations, "unserved_poi")
    digest = claim.digest()
    seen = set()
    for a in attestations:
        if a.validator in seen:
            return _reject(claim, attestations, "duplicate_attestation")
        seen.add(a.validator)
        if a.validator not in state.validators:
            return _reject(claim, attestations, "not_in_validator_set")
        if a.validator not in eligible:
            return _reject(claim, attestations, "ineligible_verifier")
        try:
            ok = crypto.verify(a.validator, {"attest": digest}, a.signature)
        except SignatureFormatError:
            ok = False
        if not ok:
            return _reject(claim, attestations, "bad_attestation_signature")

    # (3) stake threshold
    if not attestations:
        return _reject(claim, attestations, "no_attestations")
    for a in attestations:
        if eligible[a.validator].stake < econ.min_stake:
            return _reject(claim, attestations, "insufficient_stake")
    attesting = sum(eligible[a.validator].stake for a in attestations)
    if attesting < cfg.quorum * sum(v.stake for v in eligible.values()):
        return _reject(claim, attestations, "no_quorum")

    # (4) location proof; receipts from slashed beacons are ignored
    location = claim.location
    if location.mode == BEACON and state.ignored_beacons:
        location = LocationClaim(
            location.claimant,
            location.claimed_position,
            location.time,
            tuple(r for r in location.receipts if r.beacon_id not in state.ignored_beacons),
            location.mode,
        )
    if location.mode != poi.proof_mode:
        return _reject(claim, attestations, "wrong_proof_mode")
    try:
        loc = verify_location_claim(location, poi, state.beacons, cfg.proof)
    except ProofError as exc:
        return _reject(claim, attestations, exc.reason)
    if not loc.accepted:
        return _reject(claim, attestations, loc.reason, **loc.detail)

    # (5) behavior over time
    bot = check_behavior_over_time(state.history.get(claim.claimant, []), location, cfg.proof)
    if not bot.accepted:
        return _reject(claim, attestations, bot.reason, **loc.detail)

    # (6) required social proofs
    for kind in poi.required_social:
        offered = [sp for sp in claim.social if sp.kind == kind]
        if not offered:
            return _reject(claim, attestations, "missing_social_proof", kind=kind)
        results = []
        for sp in offered:
            try:
                results.append(
                    verify_social_proof(sp, poi, state, claimant=claim.claimant, claim_time=claim.time, cfg=cfg.proof)
                )
            except ProofError as exc:
                results.append(Verdict.reject(exc.reason))
        if not any(results):
            return _reject(claim, attestations, results[0].reason, kind=kind)

    # answers must belong to this claim's poi and be admissible
    reward = 0
    for r in claim.answers:
        if r.participant != claim.claimant or r.poi_id != poi.id:
            return _reject(claim, attestations, "inadmissible_answer")
        try:
            question = poi.question(r.question_id)
            question.check(r.answer)
        except (KeyError, InadmissibleAnswer):
            return _reject(claim, attestations, "inadmissible_answer")
        if (claim.claimant, poi.id, claim.asset_id, r.question_id) not in state.registry:
            reward += question.reward(r.answer)

    if state.balances.get(claim.claimant, 0) < econ.claim_fee:
        return _reject(claim, attestations, "insufficient_fee")
    reward = min(reward, state.balances.get(TREASURY, 0))
    return VerdictRecord(claim, attestations, True, None, dict(loc.detail), econ.claim_fee, reward)


def apply_verdict(state: LedgerState, record: VerdictRecord, height: int) -> None:
    """Apply an accepted verdict: fees, rewards, nonce, presence registry."""
    if not record.accepted:
        return
    claim = record.claim
    state.nonces.setdefault(claim.claimant, set()).add(claim.nonce)
    state.balances[claim.claimant] = state.balances.get(claim.claimant, 0) - record.fee
    state.pool += record.fee
    if record.reward:
        state.balances[TREASURY] -= record.reward
        state.balances[claim.claimant] += record.reward
    position = claim.location.claimed_position
    state.history.setdefault(claim.claimant, []).append((claim.time, position))
    used = tuple(record.detail.get("used", ()))
    digest = claim.digest()
    for r in claim.answers:
        state.put_record(
            PresenceRecord(claim.claimant, claim.poi_id, claim.asset_id, r.question_id, claim.time,
                           position, digest, height, used)
        )
    if not claim.answers:
        state.put_record(
            PresenceRecord(claim.claimant, claim.poi_id, claim.asset_id, "", claim.time, position, digest, height, used)
        )
    for beacon_id in record.detail.get("excluded", ()):
        state.exclusions[beacon_id] = state.exclusions.get(beacon_id, 0) + 1
