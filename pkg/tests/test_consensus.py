from __future__ import annotations

import dataclasses
import random
from collections import Counter

import pytest
from conftest import ORIGIN, Chain, gps_claim, keys, make_beacons, make_poi

from witnessnet.consensus import (
    TREASURY,
    Block,
    BlockError,
    ConsensusConfig,
    EconomicsConfig,
    LedgerState,
    RegistrationError,
    UnservedPoi,
    Validator,
    ValidatorRole,
    ValidatorStatus,
    WrongProducer,
    apply_block,
    attest,
    eligible_verifiers,
    register_validator,
    select_producer,
    settle_epoch,
    slash_validator,
    verify_chain,
)
from witnessnet.geo import offset
from witnessnet.proofs import BEACON, LocationClaim, measure_ranges, sign_claim
from witnessnet.crowdsense import Response

ALICE = keys("alice").key


def bare_state(**econ) -> LedgerState:
    config = ConsensusConfig(EconomicsConfig(**econ))
    return LedgerState("s", config, {"poi": make_poi()}, {}, balances={"k": 1000}, initial_supply=1000)


def fund(st: LedgerState, key: str, amount: int) -> None:
    st.balances[key] = st.balances.get(key, 0) + amount
    st.initial_supply += amount


def test_registration_boundaries():
    st = bare_state(entry_cost=10, min_stake=100)
    with pytest.raises(RegistrationError):
        register_validator(st, "k", 109, "full")
    v = register_validator(st, "k", 110, "full")
    assert v.stake == 100 and st.burned == 10 and st.balances["k"] == 890
    with pytest.raises(RegistrationError):
        register_validator(st, "k", 110, "full")
    with pytest.raises(RegistrationError):
        register_validator(st, "poor", 110, "full")
    fund(st, "x", 500)
    with pytest.raises(RegistrationError):
        register_validator(st, "x", 200, "location", ["nowhere"])
    slash_validator(st, "k")
    with pytest.raises(RegistrationError, match="slashed"):
        register_validator(st, "k", 110, "full")
    assert st.conserved()


def test_slash_arithmetic():
    st = bare_state(exit_penalty_fraction=0.5)
    register_validator(st, "k", 511, "full")
    outcome = slash_validator(st, "k")
    assert outcome == {"burned": 250, "refunded": 251}
    assert st.validators["k"].status is ValidatorStatus.SLASHED
    assert st.conserved()


def test_settle_epoch_boundaries():
    st = bare_state(existence_cost=1, min_stake=100, entry_cost=0)
    fund(st, "a", 101)
    fund(st, "b", 100)
    register_validator(st, "a", 101, "full")
    register_validator(st, "b", 100, "full")
    events = settle_epoch(st)
    assert st.validators["a"].active and st.validators["a"].stake == 100
    assert st.validators["b"].status is ValidatorStatus.EXITED
    assert events == [{"type": "exit", "validator": "b", "charged": 1, "refunded": 99}]
    assert st.balances["b"] == 99
    assert st.conserved()


def test_sybil_cost():
    econ = dict(entry_cost=10, min_stake=100, exit_penalty_fraction=0.5)
    st = bare_state(**econ)
    k = 7
    for i in range(k):
        fund(st, f"sybil{i}", 110)
        register_validator(st, f"sybil{i}", 110, "full")
        slash_validator(st, f"sybil{i}")
    assert st.burned >= k * (10 + 0.5 * 100)
    assert st.conserved()


def test_eligible_verifiers_roles():
    st = bare_state()
    pois = {"poi": make_poi(), "far": make_poi("far")}
    st.pois = pois
    st.validators = {
        "loc": Validator("loc", 500, ValidatorRole.LOCATION, frozenset({"far"})),
        "soc": Validator("soc", 50, ValidatorRole.SOCIAL),
    }
    claim = gps_claim("alice", social=())
    with pytest.raises(UnservedPoi):
        eligible_verifiers(claim, st)
    st.validators["soc"].stake = 500
    from witnessnet.proofs import CHALLENGE_ANSWER, SocialProof

    social_claim = gps_claim("alice", social=[SocialProof(CHALLENGE_ANSWER, "x")])
    assert [v.key for v in eligible_verifiers(social_claim, st)] == ["soc"]
    st.validators["soc"].stake = 50
    with pytest.raises(UnservedPoi):
        eligible_verifiers(social_claim, st)
    far_claim = gps_claim("alice", poi_id="far")
    assert [v.key for v in eligible_verifiers(far_claim, st)] == ["loc"]


def test_producer_frequency_follows_stake():
    pool = [Validator("A", 3, ValidatorRole.FULL), Validator("B", 1, ValidatorRole.FULL)]
    counts = Counter(select_producer(pool, h, "freq").key for h in range(1, 10_001))
    assert abs(counts["A"] - 7500) <= 150
    equal = [Validator(n, 10, ValidatorRole.FULL) for n in "XYZ"]
    counts = Counter(select_producer(equal, h, "eq").key for h in range(1, 10_001))
    sigma = (10_000 * (1 / 3) * (2 / 3)) ** 0.5
    assert all(abs(c - 10_000 / 3) <= 3 * sigma for c in counts.values())


def test_accepted_claim_moves_fee_and_reward():
    chain = Chain(balances={ALICE: 10})
    block = chain.block([gps_claim("alice")])
    record = block.records[0]
    assert record.accepted and record.fee == 1 and record.reward == 1
    st = chain.state
    assert st.balances[ALICE] == 10
    assert st.balances[TREASURY] == 999
    assert st.has_presence(ALICE, "poi")
    assert st.conserved()


def test_pipeline_rejections():
    chain = Chain(balances={ALICE: 10})
    assert chain.block([gps_claim("broke", nonce="b")]).records[0].reason == "insufficient_fee"
    outside = gps_claim("alice", offset(ORIGIN, 500, 0))
    assert chain.block([outside]).records[0].reason == "outside_fence"
    assert chain.block([gps_claim("alice", answer=7)]).records[0].reason == "inadmissible_answer"

    claim = gps_claim("alice", time=5.0)
    too_few = [attest(chain.by_key[keys("validator:v1").key], claim)]
    rogue = [attest(keys("rogue"), claim), *chain.attest_all(claim)]
    from witnessnet.consensus import produce_block

    def submit(claim, attestations):
        chain.t += 1
        return produce_block(chain.ledger, [(claim, attestations)], chain.producer(), chain.t).records[0]

    assert submit(claim, too_few).reason == "no_quorum"
    assert submit(claim, rogue).reason == "not_in_validator_set"
    assert submit(claim, []).reason == "no_attestations"
    forged = dataclasses.replace(claim, signature=keys("mallory").sign(claim.body()))
    assert submit(forged, chain.attest_all(forged)).reason == "bad_claim_signature"
    assert submit(claim, chain.attest_all(claim)).accepted
    assert submit(claim, chain.attest_all(claim)).reason == "replay"
    far = gps_claim("alice", offset(ORIGIN, 30, 0), time=10.0)
    assert submit(far, chain.attest_all(far)).accepted
    jump = gps_claim("alice", offset(ORIGIN, -50, 0), time=10.5)
    assert submit(jump, chain.attest_all(jump)).reason == "teleport"


def test_conservation_and_presence_over_1000_blocks():
    names = ["alice", "bob", "carol"]
    chain = Chain(balances={keys(n).key: 50 for n in names})
    rng = random.Random(3)
    for h in range(1, 1001):
        claims = []
        if h % 10 == 0:
            name = rng.choice(names)
            claims.append(gps_claim(name, offset(ORIGIN, rng.uniform(-40, 40), 0), time=float(h),
                                    answer=rng.randint(0, 5)))
        chain.block(claims)
        assert chain.state.conserved(), h
    accepted = {(r.claim.claimant, r.claim.poi_id, r.claim.asset_id, "q")
                for r in chain.ledger.records() if r.accepted}
    assert set(chain.state.registry) == accepted
    check = verify_chain(chain.ledger)
    assert check.ok and check.heights == 1001


@pytest.fixture(scope="module")
def hundred_blocks() -> bytes:
    chain = Chain(balances={ALICE: 100})
    for h in range(1, 101):
        claims = [gps_claim("alice", time=float(h), answer=h % 6)] if h % 5 == 0 else []
        chain.block(claims)
    return chain.ledger.export_bytes()


def test_fresh_chain_verifies(hundred_blocks):
    assert verify_chain(hundred_blocks).ok


def test_bit_flip_pins_height(hundred_blocks):
    lines = hundred_blocks.split(b"\n")
    target = lines[50]
    pos = target.index(b'"records"') + 40
    flipped = bytearray(target)
    flipped[pos] ^= 0x01
    lines[50] = bytes(flipped)
    check = verify_chain(b"\n".join(lines))
    assert not check.ok and check.height == 50


def test_reordered_claims_fail():
    chain = Chain(balances={ALICE: 10, keys("bob").key: 10})
    chain.block([gps_claim("alice", time=1.0), gps_claim("bob", time=2.0)])
    data = chain.ledger.export_bytes()
    import json

    from witnessnet.consensus import canonical_json

    lines = data.decode().splitlines()
    block = json.loads(lines[1])
    block["records"].reverse()
    lines[1] = canonical_json(block)
    check = verify_chain("\n".join(lines).encode())
    assert not check.ok and check.height == 1


def test_duplicate_height_and_wrong_producer():
    chain = Chain()
    block = chain.block()
    with pytest.raises(BlockError):
        apply_block(chain.state.clone(), block)
    from witnessnet.consensus import produce_block

    wrong = next(s for s in chain.signers.values() if s.key != chain.producer().key)
    with pytest.raises(WrongProducer):
        produce_block(chain.ledger, [], wrong, 9.0)


def test_no_nonce_grinding_affects_validity():
    chain = Chain()
    honest = chain.block()
    # Valid blocks need no hash prefix.
    assert not honest.hash.startswith("0000")
    state = chain.state.clone()
    wrong = next(s for s in chain.signers.values() if s.key != chain.producer().key)
    for grind in range(200):
        body = Block(state.height + 1, state.tip_hash, float(grind), wrong.key, (), ())
        signed = dataclasses.replace(body, signature=wrong.sign(body.body()))
        sealed = dataclasses.replace(signed, hash=signed.compute_hash())
        with pytest.raises(WrongProducer):
            apply_block(state.clone(), sealed)


def _beacon_chain():
    op = keys("validator:op")
    beacons = make_beacons(5, byzantine=(4,))
    beacons = {bid: dataclasses.replace(b, operator=op.key) if b.byzantine else b for bid, b in beacons.items()}
    poi = make_poi(proof_mode="beacon")
    config = ConsensusConfig(EconomicsConfig(epoch_length=10_000))
    chain = Chain(validators=(("v1", 1000), ("v2", 1000), ("op", 510)), pois={"poi": poi}, beacons=beacons,
                  config=config, balances={ALICE: 100})
    return chain, beacons


def beacon_claim(beacons, time: float):
    k = keys("alice")
    receipts = measure_ranges(ORIGIN, beacons.values(), 0.2, random.Random(int(time)), time=time, claimant=k.key)
    location = LocationClaim(k.key, ORIGIN, time, tuple(receipts), BEACON)
    return sign_claim(k, location, [], "poi", "asset", [Response(k.key, "poi", "q", 2, time)], f"n{time}")


def test_byzantine_beacon_slashed_once():
    chain, beacons = _beacon_chain()
    slashes = []
    for i in range(6):
        block = chain.block([beacon_claim(beacons, 10.0 + 100 * i)] if i < 5 else [])
        slashes += [e for e in block.events if e["type"] == "slash"]
        if i < 2:
            assert not slashes
    assert len(slashes) == 1
    event = slashes[0]
    assert event["stake"] == 500 and event["burned"] == 250
    assert chain.state.validators[keys("validator:op").key].status is ValidatorStatus.SLASHED
    assert "b5" in chain.state.ignored_beacons
    assert chain.state.conserved()
    assert verify_chain(chain.ledger).ok


def test_two_exclusions_do_not_slash():
    chain, beacons = _beacon_chain()
    for i in range(2):
        block = chain.block([beacon_claim(beacons, 10.0 + 100 * i)])
        assert block.records[0].accepted
        assert not [e for e in block.events if e["type"] == "slash"]
    assert chain.state.exclusions["b5"] == 2
