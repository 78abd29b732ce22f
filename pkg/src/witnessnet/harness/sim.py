"""Deterministic discrete-event replay of a scenario.

One priority queue drives everything. Events at the same instant run in
``(kind, participant, poi, sequence)`` order, so processing order never
depends on how the scenario file was laid out.
"""

from __future__ import annotations

import enum
import heapq
import logging
import math
import random
from collections import Counter
from dataclasses import dataclass, field

from ..aggregate import (
    AggregatorAgent,
    EmptyAggregate,
    MapKind,
    eligibility,
    gossip_round,
    oracle,
    random_topology,
    read_estimate,
)
from ..consensus import (
    TREASURY,
    ConsensusConfig,
    Ledger,
    NoActiveValidators,
    UnservedPoi,
    World,
    attest,
    eligible_verifiers,
    produce_block,
    select_producer,
)
from ..crowdsense import (
    AssetProgress,
    ParticipantFilter,
    Response,
    Task,
    launch_assignment,
    localization_events,
    mark_answered,
    record_response,
)
from ..crypto import DIGEST_NAME, SIGNATURE_SCHEME, KeyPair
from ..geo import Circle, GeoPoint, inside_geofence, offset
from ..proofs import (
    BEACON,
    CHALLENGE_ANSWER,
    PEER_WITNESS,
    QR_TOKEN,
    Beacon,
    LocationClaim,
    SocialProof,
    make_peer_witness,
    measure_ranges,
    qr_token,
    sign_claim,
)
from . import stats
from .scenario import Scenario, interpolate, random_answer

log = logging.getLogger(__name__)


class EventKind(enum.IntEnum):
    POSITION = 0
    BLOCK = 1
    GOSSIP = 2
    DELIVERY = 3
    SNAPSHOT = 4


@dataclass
class RunReport:
    scenario: dict
    header: dict
    answers: list[dict] = field(default_factory=list)
    poi_stats: list[dict] = field(default_factory=list)
    first_triggers: list[dict] = field(default_factory=list)
    estimates: list[dict] = field(default_factory=list)
    final: list[dict] = field(default_factory=list)
    verdicts: dict[str, int] = field(default_factory=dict)
    slashing: list[dict] = field(default_factory=list)
    balance_sheet: dict = field(default_factory=dict)
    correlations: list[dict] = field(default_factory=list)
    ledger: dict = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)
    chain: Ledger | None = field(default=None, repr=False, compare=False)

    SECTIONS = ("answers", "poi_stats", "first_triggers", "estimates", "final", "slashing", "correlations")

    def trigger_time(self, participant: str, poi: str) -> float | None:
        for row in self.first_triggers:
            if row["participant"] == participant and row["poi"] == poi:
                return row["time"]
        return None

    def poi_mean(self, poi: str, question: str) -> float:
        for row in self.poi_stats:
            if row["poi"] == poi and row["question"] == question:
                return row["mean"]
        raise KeyError((poi, question))


class Simulation:
    def __init__(self, scenario: Scenario):
        self.s = scenario
        seed = scenario.seed
        self.participant_keys = {n: KeyPair.derive(seed, f"participant:{n}") for n in scenario.participants}
        self.validator_keys = {n: KeyPair.derive(seed, f"validator:{n}") for n in scenario.validators}
        self.keys_by_pub = {kp.key: kp for kp in self.validator_keys.values()}
        self.name_of = {kp.key: n for n, kp in self.participant_keys.items()}
        self.name_of.update({kp.key: n for n, kp in self.validator_keys.items()})

        self.beacons: dict[str, Beacon] = {}
        for b in scenario.beacons.values():
            kp = KeyPair.derive(seed, f"beacon:{b.id}")
            operator = self.validator_keys[b.operator].key if b.operator else None
            self.beacons[b.id] = Beacon(b.id, b.position, b.comm_range, kp.key, b.clock_offset, b.byzantine,
                                        operator, kp)
        self.ledger = Ledger(self._world())
        self.ranging_rng = random.Random(f"ranging:{seed}")

        # navigation state per (participant, assignment)
        self.tasks: dict[str, Task] = {}
        self.progress: dict[tuple[str, str], AssetProgress] = {}
        self.assignment_of: dict[str, list[str]] = {n: [] for n in scenario.participants}
        for spec in scenario.assignments.values():
            asset = scenario.assets[spec.asset]
            task = self.tasks.setdefault(spec.task, Task(spec.task))
            pf = ParticipantFilter(spec.participants, spec.fraction)
            assignment, progress = launch_assignment(spec.id, asset, task, pf, scenario.participants, seed)
            for name, prog in progress.items():
                self.progress[(name, spec.id)] = prog
                self.assignment_of[name].append(spec.id)

        self.position: dict[str, GeoPoint] = {}
        self.mempool: list = []
        self.claim_meta: dict[str, tuple[str, str]] = {}
        self.nonce_counter: Counter = Counter()

        self.agents = {
            m: {n: AggregatorAgent(n, m) for n in scenario.participants} for m in scenario.maps
        }
        self.eligible = {m: {n: False for n in scenario.participants} for m in scenario.maps}
        self.topology: dict[str, dict] = {m: {} for m in scenario.maps}
        self.membership_version = Counter()
        self.gossip_rng = {m: random.Random(f"gossip:{seed}:{m}") for m in scenario.maps}

        self.report = RunReport(
            scenario=scenario.echo(),
            header={"signature": SIGNATURE_SCHEME, "digest": DIGEST_NAME},
        )
        self._last_snapshot: dict[tuple[str, str, str], float] = {}
        self._verdicts: Counter = Counter()
        self._queue: list = []
        self._seq = 0
        self.deliveries_log: list[tuple[float, str, str, str]] = []

    # ------------------------------------------------------------------ setup
    def _world(self) -> World:
        s = self.s
        balances = {kp.key: s.participants[n].balance for n, kp in self.participant_keys.items()}
        registrations = []
        for name, v in s.validators.items():
            kp = self.validator_keys[name]
            balances[kp.key] = v.balance if v.balance is not None else v.deposit
            registrations.append({"key": kp.key, "deposit": v.deposit, "role": v.role.value,
                                  "served_pois": sorted(v.served_pois)})
        if s.treasury:
            balances[TREASURY] = s.treasury
        config = ConsensusConfig(s.economics, s.tolerances, s.slash_threshold, s.quorum)
        return World(s.seed, config, s.pois, self.beacons, balances, tuple(registrations))

    def _push(self, time: float, kind: EventKind, participant: str = "", poi: str = "", payload=None) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time, int(kind), participant, poi, self._seq, payload))

    def _position_times(self, name: str) -> list[float]:
        s = self.s
        ticks = {k * s.intervals.position for k in range(int(math.floor(s.duration / s.intervals.position)) + 1)}
        ticks.update(t for t, _ in s.traces[name] if 0 <= t <= s.duration)
        return sorted(ticks)

    # ----------------------------------------------------------------- events
    def run(self) -> RunReport:
        s = self.s
        self._ticks = {n: self._position_times(n) for n in s.participants}
        self._tick_index = {n: 0 for n in s.participants}
        for n in s.participants:
            self._push(self._ticks[n][0], EventKind.POSITION, n)
        for k in range(1, int(math.floor(s.duration / s.intervals.block)) + 1):
            self._push(k * s.intervals.block, EventKind.BLOCK)
        for k in range(1, int(math.floor(s.duration / s.intervals.gossip)) + 1):
            t = k * s.intervals.gossip
            self._push(t, EventKind.GOSSIP)
            self._push(t, EventKind.SNAPSHOT)

        while self._queue and self._queue[0][0] <= s.duration:
            time, kind, participant, poi, _, payload = heapq.heappop(self._queue)
            kind = EventKind(kind)
            if kind is EventKind.POSITION:
                self._on_position(time, participant)
            elif kind is EventKind.BLOCK:
                self._on_block(time)
            elif kind is EventKind.GOSSIP:
                self._on_gossip(time)
            elif kind is EventKind.DELIVERY:
                self._on_delivery(poi, payload)
            else:
                self._on_snapshot(time)
        self._finish()
        return self.report

    def _on_position(self, t: float, name: str) -> None:
        idx = self._tick_index[name] + 1
        self._tick_index[name] = idx
        if idx < len(self._ticks[name]):
            self._push(self._ticks[name][idx], EventKind.POSITION, name)

        spec = self.s.participants[name]
        true_pos = interpolate(self.s.traces[name], t)
        pos = offset(true_pos, *spec.spoof) if spec.spoof else true_pos
        self.position[name] = pos
        for assignment_id in self.assignment_of[name]:
            asset = self.s.assets[self.s.assignments[assignment_id].asset]
            progress = self.progress[(name, assignment_id)]
            fence_for = (lambda poi: Circle(poi.center, spec.radius)) if spec.radius else None
            for poi_id in localization_events(pos, progress, asset, fence_for):
                if self.report.trigger_time(name, poi_id) is None:
                    self.report.first_triggers.append(
                        {"participant": name, "poi": poi_id, "time": t, "radius": spec.radius}
                    )
                first_answer = self._submit_claim(t, name, assignment_id, poi_id, pos, true_pos)
                mark_answered(progress, asset, poi_id, first_answer)
        if any(m.map.kind is MapKind.LOCALIZED for m in self.s.maps.values()):
            self._refresh_participant(name, localized_only=True)

    def _answer(self, name: str, poi, question_id: str):
        if self.s.answer_mode == "random":
            return random_answer(self.s.seed, name, poi, question_id)
        return self.s.answers.get((name, poi.id, question_id))

    def _submit_claim(self, t: float, name: str, assignment_id: str, poi_id: str, pos: GeoPoint,
                      true_pos: GeoPoint):
        s = self.s
        kp = self.participant_keys[name]
        poi = s.pois[poi_id]
        responses = []
        for q in poi.questions:
            answer = self._answer(name, poi, q.id)
            if answer is not None:
                responses.append(Response(kp.key, poi_id, q.id, answer, t))

        if poi.proof_mode == BEACON:
            receipts = measure_ranges(true_pos, self.beacons.values(), s.ranging_noise, self.ranging_rng,
                                      time=t, claimant=kp.key)
            location = LocationClaim(kp.key, pos, t, tuple(receipts), BEACON)
        else:
            location = LocationClaim(kp.key, pos, t)

        social = []
        # Tokens and challenge answers need the participant to actually be there.
        on_site = inside_geofence(true_pos, poi.fence)
        for kind in (poi.required_social if on_site else ()):
            if kind == CHALLENGE_ANSWER and poi.challenge_answer is not None:
                social.append(SocialProof(CHALLENGE_ANSWER, poi.challenge_answer))
            elif kind == QR_TOKEN and poi.qr_secret is not None:
                window = int(math.floor(t / s.tolerances.qr_window))
                social.append(SocialProof(QR_TOKEN, qr_token(poi.qr_secret, poi_id, window)))
            elif kind == PEER_WITNESS:
                witness = self._find_witness(name, poi)
                if witness is not None:
                    social.append(make_peer_witness(self.participant_keys[witness], kp.key, poi_id, t))

        self.nonce_counter[name] += 1
        nonce = f"{name}-{self.nonce_counter[name]}"
        assignment = s.assignments[assignment_id]
        claim = sign_claim(kp, location, social, poi_id, assignment.asset, responses, nonce)
        try:
            verifiers = eligible_verifiers(claim, self.ledger.state)
        except UnservedPoi:
            verifiers = []
        attestations = [attest(self.keys_by_pub[v.key], claim) for v in verifiers]
        self.mempool.append((claim, attestations))
        self.claim_meta[claim.digest()] = (name, assignment.task)
        return responses[0].answer if responses else None

    def _find_witness(self, name: str, poi):
        state = self.ledger.state
        for other in sorted(self.s.participants):
            if other == name or other not in self.position:
                continue
            if inside_geofence(self.position[other], poi.fence) and state.has_presence(
                    self.participant_keys[other].key, poi.id):
                return other
        return None

    def _on_block(self, t: float) -> None:
        state = self.ledger.state
        try:
            producer = select_producer(state.active_validators(), state.height + 1, state.seed)
        except NoActiveValidators:
            if "no active validators; block production halted" not in self.report.notes:
                self.report.notes.append("no active validators; block production halted")
            return
        pending, self.mempool = self.mempool, []
        block = produce_block(self.ledger, pending, self.keys_by_pub[producer.key], t)
        for record in block.records:
            self._verdicts[record.reason or "accepted"] += 1
            if record.accepted:
                self._accept(record.claim)
        for event in block.events:
            if event["type"] in ("slash", "invalidate", "ignore_beacon"):
                self.report.slashing.append({"height": block.height, "time": t, **self._named(event)})
        self._refresh_all()

    def _named(self, event: dict) -> dict:
        out = dict(event)
        for k in ("validator", "claimant"):
            if k in out:
                out[k] = self.name_of.get(out[k], out[k])
        return out

    def _accept(self, claim) -> None:
        name, task_id = self.claim_meta[claim.digest()]
        task = self.tasks[task_id]
        poi = self.s.pois[claim.poi_id]
        for r in claim.answers:
            question = poi.question(r.question_id)
            record_response(Response(name, r.poi_id, r.question_id, r.answer, r.timestamp), task, question)
            for spec in self.s.maps.values():
                m = spec.map
                if m.input_poi == r.poi_id and m.question == r.question_id:
                    self.agents[m.id][name].set_input(question.numeric_value(r.answer, m.option))

    def _is_eligible(self, name: str, map_id: str) -> bool:
        spec = self.s.maps[map_id]
        key = self.participant_keys[name].key
        fences = {p: self.s.pois[p].fence for p in spec.map.pois}
        return eligibility(key, spec.map, self.ledger.state, position=self.position.get(name), fences=fences)

    def _set_eligible(self, name: str, map_id: str, value: bool) -> bool:
        if self.eligible[map_id][name] == value:
            return False
        self.eligible[map_id][name] = value
        agent = self.agents[map_id][name]
        agent.join() if value else agent.leave()
        self.membership_version[map_id] += 1
        return True

    def _refresh_participant(self, name: str, localized_only: bool = False) -> None:
        for map_id, spec in self.s.maps.items():
            if localized_only and spec.map.kind is not MapKind.LOCALIZED:
                continue
            if self._set_eligible(name, map_id, self._is_eligible(name, map_id)):
                self._sync(map_id)

    def _refresh_all(self) -> None:
        for map_id in self.s.maps:
            changed = False
            for name in self.s.participants:
                changed |= self._set_eligible(name, map_id, self._is_eligible(name, map_id))
            if changed:
                self._sync(map_id)

    def _sync(self, map_id: str) -> None:
        table = self.eligible[map_id]
        for name, agent in sorted(self.agents[map_id].items()):
            if agent.eligible:
                agent.sync_registry(table.__getitem__)

    def _peer_view(self, map_id: str) -> dict:
        version = self.membership_version[map_id]
        cached = self.topology[map_id]
        if cached.get("version") != version:
            members = [n for n, ok in sorted(self.eligible[map_id].items()) if ok]
            graph = random_topology(members, self.s.gossip.degree, f"{self.s.seed}:{map_id}:{version}")
            cached.clear()
            cached.update(version=version, graph=graph)
        return cached["graph"]

    def _gossip(self, map_id: str, t: float):
        return gossip_round(self.agents[map_id], self._peer_view(map_id), self.gossip_rng[map_id],
                            self.s.gossip.fanout, self.s.network, t)

    def _on_gossip(self, t: float) -> None:
        for map_id in self.s.maps:
            for d in self._gossip(map_id, t):
                self._push(d.time, EventKind.DELIVERY, d.receiver, map_id, d)

    def _on_delivery(self, map_id: str, delivery) -> None:
        self.deliveries_log.append((delivery.time, map_id, delivery.sender, delivery.receiver))
        self.agents[map_id][delivery.receiver].receive(delivery.message, self.eligible[map_id].__getitem__)

    def _on_snapshot(self, t: float) -> None:
        for map_id, spec in self.s.maps.items():
            for name, agent in sorted(self.agents[map_id].items()):
                if not agent.eligible:
                    continue
                for fn in spec.functions:
                    try:
                        value = float(read_estimate(agent, fn))
                    except EmptyAggregate:
                        continue
                    key = (name, map_id, fn)
                    if self._last_snapshot.get(key) != value:
                        self._last_snapshot[key] = value
                        self.report.estimates.append(
                            {"time": t, "agent": name, "map": map_id, "function": fn, "value": value}
                        )

    # ----------------------------------------------------------------- finish
    def _target(self, map_id: str) -> dict:
        return {
            n: (a.own_version, a.own_value)
            for n, a in sorted(self.agents[map_id].items())
            if a.eligible and a.own_value is not None
        }

    def _quiescent(self, map_id: str) -> bool:
        target = self._target(map_id)
        for agent in self.agents[map_id].values():
            if not agent.eligible:
                continue
            live = {n: (e.version, e.value) for n, e in agent.known.items() if not e.tombstone}
            if live != target:
                return False
        return True

    def _finish(self) -> None:
        s = self.s
        t = s.duration
        while self.mempool:
            t += s.intervals.block
            before = len(self.mempool)
            self._on_block(t)
            if len(self.mempool) >= before:
                break
        for map_id in s.maps:
            rounds = 0
            while not self._quiescent(map_id) and rounds < s.gossip.max_drain_rounds:
                rounds += 1
                deliveries = self._gossip(map_id, t + rounds * s.intervals.gossip)
                for d in sorted(deliveries, key=lambda d: (d.time, d.sender, d.receiver)):
                    self._on_delivery(map_id, d)
            if not self._quiescent(map_id):
                self.report.notes.append(f"map {map_id}: no quiescence after {rounds} drain rounds")
            for agent in self.agents[map_id].values():
                if agent.eligible:
                    agent.epoch_recompute()
        self._on_snapshot(t + s.gossip.max_drain_rounds * s.intervals.gossip)
        self._summarise()

    def _summarise(self) -> None:
        s, r = self.s, self.report
        for task_id, task in sorted(self.tasks.items()):
            for (who, poi_id, qid), resp in sorted(task.responses.items()):
                answer = list(resp.answer) if isinstance(resp.answer, tuple) else resp.answer
                r.answers.append({
                    "task": task_id, "participant": who, "group": s.participants[who].group,
                    "poi": poi_id, "question": qid, "answer": answer, "time": resp.timestamp,
                })
        for poi_id, poi in s.pois.items():
            for q in poi.questions:
                if q.kind.value in ("text", "checkbox"):
                    continue
                values = [float(a["answer"]) for a in r.answers if a["poi"] == poi_id and a["question"] == q.id]
                if values:
                    r.poi_stats.append({"poi": poi_id, "name": poi.name, "question": q.id, "n": len(values),
                                        "mean": stats.mean(values), "median": stats.median(values)})
        r.first_triggers.sort(key=lambda row: (row["poi"], row["time"], row["participant"]))

        for map_id, spec in s.maps.items():
            truth = oracle(v for _, v in self._target(map_id).values())
            for name, agent in sorted(self.agents[map_id].items()):
                if not agent.eligible:
                    continue
                for fn in spec.functions:
                    try:
                        value = float(read_estimate(agent, fn))
                    except EmptyAggregate:
                        value = None
                    expected = truth.get(fn)
                    r.final.append({"map": map_id, "agent": name, "function": fn, "value": value,
                                    "oracle": None if expected is None else float(expected)})

        r.verdicts = dict(sorted(self._verdicts.items()))
        r.balance_sheet = self.ledger.state.balance_sheet()
        r.ledger = {"height": self.ledger.height, "tip": self.ledger.state.tip_hash}
        if s.validation is not None:
            r.correlations = correlate(r, s)


def correlate(report: RunReport, s: Scenario) -> list[dict]:
    v = s.validation
    pois = list(v.baseline)
    baseline = [v.baseline[p] for p in pois]
    rows = []
    for stat in v.statistics:
        values = []
        for p in pois:
            row = next((x for x in report.poi_stats if x["poi"] == p and x["question"] == v.question), None)
            values.append(None if row is None else row[stat])
        if None in values:
            report.notes.append(f"validation {stat}: some pois have no answers")
            continue
        entry = {"statistic": stat, "pois": pois, "values": values, "baseline": baseline,
                 "pearson": stats.pearson(values, baseline), "spearman": stats.spearman(values, baseline),
                 "ties": stats.has_ties(values)}
        if entry["ties"]:
            entry["spearman_untied"] = stats.spearman_ordinal(values, baseline)
        rows.append(entry)
    return rows


def run(scenario: Scenario) -> RunReport:
    sim = Simulation(scenario)
    report = sim.run()
    report.chain = sim.ledger
    return report
