from __future__ import annotations

import math

from witnessnet.crowdsense import Option, PointOfInterest, Question, QuestionKind
from witnessnet.crypto import KeyPair
from witnessnet.geo import Circle, GeoPoint, offset
from witnessnet.proofs import Beacon

ORIGIN = GeoPoint(47.3769, 8.5417)
LIKERT = Question("q", QuestionKind.LIKERT, "rate", tuple(Option(str(v), v, 1) for v in range(0, 6)))


def keys(name: str) -> KeyPair:
    return KeyPair.derive("test", name)


def make_poi(pid: str = "poi", radius: float = 60, center: GeoPoint = ORIGIN, **kw) -> PointOfInterest:
    return PointOfInterest(pid, pid, Circle(center, radius), (LIKERT,), **kw)


def make_beacons(n: int, *, spread: float = 200.0, byzantine: tuple[int, ...] = (),
                 offset_s: float = 1e-6, center: GeoPoint = ORIGIN, comm_range: float = 1000.0,
                 phase: float = 0.3) -> dict[str, Beacon]:
    """``n`` beacons evenly spaced on a ring around ``center``."""
    out = {}
    for i in range(n):
        angle = phase + 2 * math.pi * i / n
        bid = f"b{i + 1}"
        signer = keys(f"beacon:{bid}")
        bad = i in byzantine
        out[bid] = Beacon(bid, offset(center, spread * math.cos(angle), spread * math.sin(angle)),
                          comm_range, signer.key, clock_offset=offset_s if bad else 0.0,
                          byzantine=bad, signer=signer)
    return out


class Chain:
    """Ledger plus the validator key pairs needed to produce its blocks."""

    def __init__(self, *, validators=(("v1", 1000), ("v2", 1000), ("v3", 1000)), pois=None, beacons=None,
                 config=None, balances=None, roles=None, seed="chain"):
        from witnessnet.consensus import ConsensusConfig, Ledger, World

        self.signers = {name: keys(f"validator:{name}") for name, _ in validators}
        pois = pois if pois is not None else {"poi": make_poi()}
        roles = roles or {}
        funded = {TREASURY_KEY: 1000}
        regs = []
        for name, deposit in validators:
            k = self.signers[name].key
            funded[k] = deposit + 100
            role, served = roles.get(name, ("full", ()))
            regs.append({"key": k, "deposit": deposit, "role": role, "served_pois": list(served)})
        funded.update(balances or {})
        world = World(seed, config or ConsensusConfig(), pois, beacons or {}, funded, tuple(regs))
        self.ledger = Ledger(world)
        self.by_key = {s.key: s for s in self.signers.values()}
        self.t = 0.0

    @property
    def state(self):
        return self.ledger.state

    def producer(self):
        from witnessnet.consensus import select_producer

        st = self.state
        return self.by_key[select_producer(st.active_validators(), st.height + 1, st.seed).key]

    def attest_all(self, claim):
        from witnessnet.consensus import attest, eligible_verifiers

        return [attest(self.by_key[v.key], claim) for v in eligible_verifiers(claim, self.state)]

    def block(self, claims=()):
        from witnessnet.consensus import produce_block

        self.t += 1.0
        pending = [(c, self.attest_all(c)) for c in claims]
        return produce_block(self.ledger, pending, self.producer(), self.t)


TREASURY_KEY = "treasury"


def gps_claim(name: str, position=ORIGIN, *, poi_id: str = "poi", time: float = 1.0, answer=3,
              nonce: str | None = None, social=()):
    from witnessnet.crowdsense import Response
    from witnessnet.proofs import LocationClaim, sign_claim

    k = keys(name)
    answers = [] if answer is None else [Response(k.key, poi_id, "q", answer, time)]
    return sign_claim(k, LocationClaim(k.key, position, time), social, poi_id, "asset", answers,
                      nonce or f"{name}:{time}")
