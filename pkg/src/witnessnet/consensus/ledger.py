"""Hash-chained blocks, block production, slashing and chain verification.

Production and verification share :func:`apply_block`: a block is valid
iff replaying it on the state reached from genesis reproduces every verdict
and every economic event it records. The exported form is one canonical
JSON object per line, genesis first; the genesis line embeds the public
world (pois, beacons, validators, economics, seed) needed for replay.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .. import crypto
from ..crowdsense import PointOfInterest, poi_from_dict, poi_to_dict
from ..crypto import ZERO_HASH, KeyPair, SignatureFormatError
from ..proofs import BEACON, Beacon, LocationClaim, WitnessClaim, verify_location_claim
from .pipeline import (
    Attestation,
    VerdictRecord,
    apply_verdict,
    claim_order,
    select_producer,
    verify_claim_pipeline,
)
from .state import (
    ConsensusConfig,
    ConsensusError,
    LedgerState,
    register_validator,
    settle_epoch,
    slash_validator,
)

log = logging.getLogger(__name__)


class BlockError(ConsensusError):
    pass


class WrongProducer(BlockError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True, allow_nan=False)


@dataclass(frozen=True)
class World:
    """Public configuration fixed at genesis."""

    seed: int | str
    config: ConsensusConfig
    pois: Mapping[str, PointOfInterest]
    beacons: Mapping[str, Beacon]
    balances: Mapping[str, int]
    registrations: Sequence[dict] = ()

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config": self.config.to_dict(),
            "pois": [poi_to_dict(p) for _, p in sorted(self.pois.items())],
            "beacons": [b.public() for _, b in sorted(self.beacons.items())],
            "balances": dict(sorted(self.balances.items())),
            "registrations": [dict(r) for r in self.registrations],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "World":
        pois = {p["id"]: poi_from_dict(p) for p in d["pois"]}
        beacons = {b["id"]: Beacon.from_public(b) for b in d["beacons"]}
        return cls(
            d["seed"],
            ConsensusConfig.from_dict(d["config"]),
            pois,
            beacons,
            {k: int(v) for k, v in d["balances"].items()},
            tuple(d["registrations"]),
        )


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    timestamp: float
    producer: str
    records: tuple[VerdictRecord, ...]
    events: tuple[dict, ...]
    signature: str = ""
    hash: str = ""

    def body(self) -> dict:
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "timestamp": float(self.timestamp),
            "producer": self.producer,
            "records": [r.to_dict() for r in self.records],
            "events": [dict(e) for e in self.events],
        }

    def sealed_body(self) -> dict:
        return {**self.body(), "signature": self.signature}

    def compute_hash(self) -> str:
        return crypto.digest(self.sealed_body())

    def to_dict(self) -> dict:
        return {**self.sealed_body(), "hash": self.hash}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Block":
        return cls(
            int(d["height"]),
            d["prev_hash"],
            float(d["timestamp"]),
            d["producer"],
            tuple(VerdictRecord.from_dict(r) for r in d["records"]),
            tuple(d["events"]),
            d["signature"],
            d["hash"],
        )


def _genesis_state(world: World) -> tuple[LedgerState, list[dict]]:
    state = LedgerState(
        seed=world.seed,
        config=world.config,
        pois=world.pois,
        beacons=world.beacons,
        balances=dict(world.balances),
        initial_supply=sum(world.balances.values()),
    )
    events = []
    for reg in world.registrations:
        v = register_validator(state, reg["key"], int(reg["deposit"]), reg["role"], reg.get("served_pois", ()))
        events.append({"type": "register", "validator": v.key, "role": v.role.value, "stake": v.stake})
    state.height = 0
    return state, events


def _genesis_record(world: World, events: list[dict]) -> dict:
    body = {"height": 0, "prev_hash": ZERO_HASH, "world": world.to_dict(), "events": events}
    return {**body, "hash": crypto.digest(body)}


def detect_and_slash(state: LedgerState) -> list[dict]:
    """Slash operators of beacons excluded as outliers too often this epoch.

    A slashed operator's beacons are ignored from then on, and accepted
    claims that no longer verify without them are invalidated.
    """
    threshold = state.config.slash_threshold
    newly_ignored: set[str] = set()
    events = []
    for beacon_id, count in sorted(state.exclusions.items()):
        if count < threshold or beacon_id in state.ignored_beacons or beacon_id in newly_ignored:
            continue
        operator = state.beacons[beacon_id].operator
        v = state.validators.get(operator) if operator else None
        if v is not None and v.active:
            stake = v.stake
            outcome = slash_validator(state, operator)
            beacons = sorted(b.id for b in state.beacons.values() if b.operator == operator)
            events.append({
                "type": "slash",
                "validator": operator,
                "beacons": beacons,
                "exclusions": count,
                "stake": stake,
                **outcome,
            })
            newly_ignored.update(beacons)
        else:
            events.append({"type": "ignore_beacon", "beacon": beacon_id, "exclusions": count})
            newly_ignored.add(beacon_id)
    if not newly_ignored:
        return events
    state.ignored_beacons |= newly_ignored

    affected: dict[str, list[tuple]] = {}
    for key, rec in sorted(state.registry.items()):
        if newly_ignored.intersection(rec.used_beacons):
            affected.setdefault(rec.claim_digest, []).append(key)
    for claim_digest, keys in affected.items():
        location = state.beacon_claims.get(claim_digest)
        first = state.registry[keys[0]]
        poi = state.pois[first.poi_id]
        trimmed = LocationClaim(
            location.claimant, location.claimed_position, location.time,
            tuple(r for r in location.receipts if r.beacon_id not in state.ignored_beacons), location.mode,
        )
        verdict = verify_location_claim(trimmed, poi, state.beacons, state.config.proof)
        if not verdict.accepted:
            for key in keys:
                state.drop_record(key)
            events.append({
                "type": "invalidate",
                "claim": claim_digest,
                "claimant": first.claimant,
                "poi": first.poi_id,
                "reason": verdict.reason,
            })
    return events


def _finish_block(state: LedgerState, height: int, producer: str) -> list[dict]:
    econ = state.economics
    state.balances[producer] = state.balances.get(producer, 0) + econ.block_reward + state.pool
    state.minted += econ.block_reward
    state.pool = 0
    events = detect_and_slash(state)
    if height % econ.epoch_length == 0:
        events.append({"type": "epoch", "epoch": height // econ.epoch_length})
        events.extend(settle_epoch(state))
    return events


def _record_claims(state: LedgerState, record: VerdictRecord, height: int) -> None:
    apply_verdict(state, record, height)
    if record.accepted and record.claim.location.mode == BEACON:
        state.beacon_claims[record.claim.digest()] = record.claim.location


def apply_block(state: LedgerState, block: Block) -> None:
    """Validate ``block`` against ``state`` and apply it in place."""
    if block.height != state.height + 1:
        raise BlockError(f"height {block.height} does not extend tip {state.height}")
    if block.prev_hash != state.tip_hash:
        raise BlockError("prev_hash does not match the tip")
    expected = select_producer(state.active_validators(), block.height, state.seed)
    if block.producer != expected.key:
        raise WrongProducer(f"producer is not the selected validator at height {block.height}")
    try:
        signed = crypto.verify(block.producer, block.body(), block.signature)
    except SignatureFormatError as exc:
        raise BlockError(f"malformed producer signature: {exc}") from exc
    if not signed:
        raise BlockError("producer signature does not verify")
    if block.compute_hash() != block.hash:
        raise BlockError("block hash mismatch")
    orders = [claim_order(r.claim) for r in block.records]
    if orders != sorted(orders):
        raise BlockError("records are not in canonical order")
    for i, record in enumerate(block.records):
        replayed = verify_claim_pipeline(record.claim, record.attestations, state)
        if replayed.outcome() != record.outcome():
            raise BlockError(f"verdict record {i} does not re-verify")
        _record_claims(state, record, block.height)
    events = _finish_block(state, block.height, block.producer)
    if canonical_json(events) != canonical_json(list(block.events)):
        raise BlockError("recorded events differ from replay")
    state.height = block.height
    state.tip_hash = block.hash


class Ledger:
    """A single fork-free chain with its current state."""

    def __init__(self, world: World):
        # Normalise through the export format so replays see identical values.
        self.world = World.from_dict(json.loads(canonical_json(world.to_dict())))
        self.state, events = _genesis_state(self.world)
        self.genesis = _genesis_record(self.world, events)
        self.state.tip_hash = self.genesis["hash"]
        self.blocks: list[Block] = []

    @property
    def height(self) -> int:
        return self.state.height

    def append(self, block: Block) -> None:
        scratch = self.state.clone()
        apply_block(scratch, block)
        self.state = scratch
        self.blocks.append(block)

    def lines(self) -> list[str]:
        return [canonical_json(self.genesis)] + [canonical_json(b.to_dict()) for b in self.blocks]

    def export_bytes(self) -> bytes:
        return "".join(line + "\n" for line in self.lines()).encode("ascii")

    def export(self, path: str | Path) -> None:
        Path(path).write_bytes(self.export_bytes())

    def records(self) -> Iterable[VerdictRecord]:
        for b in self.blocks:
            yield from b.records


def produce_block(
    ledger: Ledger,
    pending: Iterable[tuple[WitnessClaim, Sequence[Attestation]]],
    producer: KeyPair,
    timestamp: float,
) -> Block:
    """Verify ``pending`` claims, seal a block as ``producer`` and append it."""
    height = ledger.height + 1
    expected = select_producer(ledger.state.active_validators(), height, ledger.state.seed)
    if producer.key != expected.key:
        raise WrongProducer(f"{producer.name} is not the producer for height {height}")
    scratch = ledger.state.clone()
    records = []
    for claim, attestations in sorted(pending, key=lambda item: claim_order(item[0])):
        record = verify_claim_pipeline(claim, attestations, scratch)
        _record_claims(scratch, record, height)
        records.append(record)
    events = _finish_block(scratch, height, producer.key)
    # Round-trip events so the sealed form is what a verifier will parse.
    events = json.loads(canonical_json(events))
    unsigned = Block(height, ledger.state.tip_hash, float(timestamp), producer.key, tuple(records), tuple(events))
    signed = Block(unsigned.height, unsigned.prev_hash, unsigned.timestamp, unsigned.producer, unsigned.records,
                   unsigned.events, producer.sign(unsigned.body()))
    block = Block(signed.height, signed.prev_hash, signed.timestamp, signed.producer, signed.records,
                  signed.events, signed.signature, signed.compute_hash())
    ledger.append(block)
    return block


@dataclass(frozen=True)
class ChainCheck:
    ok: bool
    height: int | None = None
    reason: str = ""
    heights: int = field(default=0)

    def __bool__(self) -> bool:
        return self.ok


def _split_lines(data: bytes) -> list[bytes]:
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    return lines


def verify_chain(source: Ledger | bytes | str | Path) -> ChainCheck:
    """Replay an exported chain from genesis; report the first failing height."""
    if isinstance(source, Ledger):
        data = source.export_bytes()
    elif isinstance(source, bytes):
        data = source
    else:
        data = Path(source).read_bytes()
    lines = _split_lines(data)
    if not lines:
        return ChainCheck(False, 0, "empty ledger")

    state = None
    for height, raw in enumerate(lines):
        try:
            text = raw.decode("ascii")
            obj = json.loads(text)
            if canonical_json(obj) != text:
                raise BlockError("line is not in canonical encoding")
            if height == 0:
                body = {k: v for k, v in obj.items() if k != "hash"}
                if obj.get("height") != 0 or obj.get("prev_hash") != ZERO_HASH:
                    raise BlockError("malformed genesis header")
                if crypto.digest(body) != obj["hash"]:
                    raise BlockError("genesis hash mismatch")
                world = World.from_dict(obj["world"])
                state, events = _genesis_state(world)
                if canonical_json(events) != canonical_json(obj["events"]):
                    raise BlockError("genesis registrations differ from replay")
                state.tip_hash = obj["hash"]
            else:
                block = Block.from_dict(obj)
                if block.height != height:
                    raise BlockError(f"line {height} carries height {block.height}")
                apply_block(state, block)
        except Exception as exc:  # any failure pins the height
            log.debug("chain verification failed at height %d: %s", height, exc)
            return ChainCheck(False, height, f"{type(exc).__name__}: {exc}", height)
    return ChainCheck(True, None, "ok", len(lines))
