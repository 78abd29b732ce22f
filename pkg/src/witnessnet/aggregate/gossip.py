"""Gossip aggregation among presence-verified participants.

Every agent gossips the entries it knows as ``(source, version, value,
tombstone)`` tuples and folds what it receives into incremental sums.
Updates and removals subtract the prior value, so aggregates track the live
input set as participants change answers or lose eligibility. Order
statistics cannot be subtracted: a removed extreme marks the candidate
stale until the next epoch recompute. Running sums are exact rationals, so
any sequence of additions and subtractions leaves no rounding residue.
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import networkx as nx

from ..geo import GeoPoint, inside_geofence
from .bloom import BloomFilter


class AggregateError(ValueError):
    pass


class EmptyAggregate(AggregateError):
    pass


class NotEligible(AggregateError):
    pass


class MapKind(str, enum.Enum):
    DISTRIBUTED = "distributed"
    LOCALIZED = "localized"


@dataclass(frozen=True)
class MeasurementMap:
    """Eligibility rule plus the response that feeds the aggregate.

    ``pois`` gates participation (OR over the set for distributed maps, the
    single poi for localized ones); ``input_poi``/``question`` name the
    response whose value each participant contributes.
    """

    id: str
    kind: MapKind
    pois: tuple[str, ...]
    input_poi: str
    question: str
    option: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", MapKind(self.kind))
        if not self.pois:
            raise AggregateError(f"map {self.id}: poi set is empty")
        if self.kind is MapKind.LOCALIZED and len(self.pois) != 1:
            raise AggregateError(f"map {self.id}: a localized map has exactly one poi")


class PresenceRegistry(Protocol):
    def has_presence(self, key: str, poi_id: str) -> bool: ...


def eligibility(
    key: str,
    mmap: MeasurementMap,
    registry: PresenceRegistry,
    *,
    position: GeoPoint | None = None,
    fences: Mapping | None = None,
) -> bool:
    if mmap.kind is MapKind.DISTRIBUTED:
        return any(registry.has_presence(key, p) for p in mmap.pois)
    poi = mmap.pois[0]
    if not registry.has_presence(key, poi):
        return False
    if position is not None and fences is not None:
        return inside_geofence(position, fences[poi])
    return True


@dataclass(frozen=True)
class Entry:
    source: str
    version: int
    value: float | None
    tombstone: bool = False

    @property
    def tag(self) -> str:
        return f"{self.source}\x1f{self.version}"


@dataclass(frozen=True)
class GossipMessage:
    sender: str
    entries: tuple[Entry, ...]


class Classification(str, enum.Enum):
    NEW = "new"
    DUPLICATE = "duplicate"
    UPDATED = "updated"
    REMOVED = "removed"


@dataclass
class BloomMemory:
    seen: BloomFilter
    removed: BloomFilter
    # Bloom verdicts overturned by the exact entry table.
    corrections: int = 0

    @classmethod
    def create(cls, capacity: int = 256, fp_rate: float = 0.01) -> "BloomMemory":
        return cls(BloomFilter(capacity, fp_rate), BloomFilter(capacity, fp_rate))

    def remember(self, entry: Entry) -> None:
        (self.removed if entry.tombstone else self.seen).add(entry.tag)


def _bloom_classify(entry: Entry, memory: BloomMemory) -> Classification:
    if entry.tag in memory.removed:
        return Classification.DUPLICATE
    earlier = any(f"{entry.source}\x1f{v}" in memory.seen for v in range(1, entry.version))
    if entry.tombstone:
        return Classification.REMOVED if earlier or entry.tag in memory.seen else Classification.DUPLICATE
    if entry.tag in memory.seen:
        return Classification.DUPLICATE
    return Classification.UPDATED if earlier else Classification.NEW


def _exact_classify(entry: Entry, known: Mapping[str, Entry]) -> Classification:
    current = known.get(entry.source)
    if entry.tombstone:
        if current is None or current.tombstone or current.version > entry.version:
            return Classification.DUPLICATE
        return Classification.REMOVED
    if current is None:
        return Classification.NEW
    if entry.version <= current.version:
        return Classification.DUPLICATE
    return Classification.NEW if current.tombstone else Classification.UPDATED


def classify(entry: Entry, memory: BloomMemory, known: Mapping[str, Entry] | None = None) -> Classification:
    """Classify an incoming entry against the agent's memory.

    With ``known=None`` only the Bloom filters are consulted, so a false
    positive can report a new entry as a duplicate. Passing the agent's
    exact entry table confirms the Bloom answer and counts corrections.
    """
    guess = _bloom_classify(entry, memory)
    if known is None:
        return guess
    exact = _exact_classify(entry, known)
    if exact is not guess:
        memory.corrections += 1
    return exact


@dataclass(frozen=True)
class AggregateState:
    count: int = 0
    total: Fraction = Fraction(0)
    sum_of_squares: Fraction = Fraction(0)
    min_candidate: float | None = None
    max_candidate: float | None = None
    min_stale: bool = False
    max_stale: bool = False
    epoch: int = 0

    @property
    def mean(self) -> float:
        if self.count == 0:
            raise EmptyAggregate("mean of an empty aggregate")
        return float(self.total / self.count)

    @property
    def std(self) -> float:
        if self.count == 0:
            raise EmptyAggregate("std of an empty aggregate")
        mean = self.total / self.count
        return math.sqrt(self.sum_of_squares / self.count - mean * mean)


def _tighten(state: AggregateState, v: float) -> AggregateState:
    changes = {}
    if state.min_candidate is None or v <= state.min_candidate:
        changes.update(min_candidate=v, min_stale=False)
    if state.max_candidate is None or v >= state.max_candidate:
        changes.update(max_candidate=v, max_stale=False)
    return replace(state, **changes) if changes else state


def apply(
    kind: Classification,
    state: AggregateState,
    value: float | None = None,
    prior: float | None = None,
) -> AggregateState:
    """Fold one classified entry into ``state``.

    ``value`` is the incoming value (new/updated); ``prior`` the value being
    replaced or removed (updated/removed).
    """
    if kind is Classification.DUPLICATE:
        return state
    if kind is Classification.NEW:
        v = Fraction(value)
        s = replace(state, count=state.count + 1, total=state.total + v,
                    sum_of_squares=state.sum_of_squares + v * v)
        return _tighten(s, value)
    if prior is None:
        raise AggregateError(f"{kind.value} entry without a prior value")
    p = Fraction(prior)
    if kind is Classification.UPDATED:
        v = Fraction(value)
        s = replace(state, total=state.total + (v - p),
                    sum_of_squares=state.sum_of_squares + (v * v - p * p))
        if prior == s.min_candidate and value > prior:
            s = replace(s, min_stale=True)
        if prior == s.max_candidate and value < prior:
            s = replace(s, max_stale=True)
        return _tighten(s, value)
    # removed
    if state.count <= 1:
        return AggregateState(epoch=state.epoch)
    s = replace(state, count=state.count - 1, total=state.total - p,
                sum_of_squares=state.sum_of_squares - p * p)
    if prior == s.min_candidate:
        s = replace(s, min_stale=True)
    if prior == s.max_candidate:
        s = replace(s, max_stale=True)
    return s


FUNCTIONS = ("count", "sum", "mean", "max", "min", "std")


@dataclass
class AggregatorAgent:
    id: str
    map_id: str
    peers: list[str] = field(default_factory=list)
    eligible: bool = False
    known: dict[str, Entry] = field(default_factory=dict)
    memory: BloomMemory = field(default_factory=BloomMemory.create)
    state: AggregateState = field(default_factory=AggregateState)
    own_version: int = 0
    own_value: float | None = None
    received: int = 0

    def ingest(self, entry: Entry) -> Classification:
        prior = self.known.get(entry.source)
        if prior == entry:
            # Exact replay: already remembered, and Bloom filters have no false negatives.
            return Classification.DUPLICATE
        kind = classify(entry, self.memory, self.known)
        prior_value = prior.value if prior is not None and not prior.tombstone else None
        self.state = apply(kind, self.state, entry.value, prior_value)
        if kind is not Classification.DUPLICATE:
            self.known[entry.source] = entry
        self.memory.remember(entry)
        return kind

    def set_input(self, value: float) -> Classification | None:
        """Record a new local value; it is announced only while eligible."""
        self.own_version += 1
        self.own_value = float(value)
        if not self.eligible:
            return None
        return self.ingest(Entry(self.id, self.own_version, self.own_value))

    def join(self) -> None:
        """Become eligible; re-announce the local input under a fresh version."""
        self.eligible = True
        if self.own_value is not None:
            self.set_input(self.own_value)

    def leave(self) -> None:
        """Stop contributing and relaying; local aggregate is discarded."""
        self.eligible = False
        self.known.clear()
        self.memory = BloomMemory.create(self.memory.seen.capacity, self.memory.seen.fp_rate)
        self.state = AggregateState(epoch=self.state.epoch)

    def outgoing(self) -> GossipMessage:
        entries = tuple(e for _, e in sorted(self.known.items()) if e.value is not None)
        return GossipMessage(self.id, entries)

    def receive(self, message: GossipMessage, is_eligible: Callable[[str], bool] | None = None) -> None:
        if not self.eligible:
            return
        self.received += 1
        for entry in message.entries:
            if is_eligible is not None and not entry.tombstone and not is_eligible(entry.source):
                continue
            self.ingest(entry)

    def sync_registry(self, is_eligible: Callable[[str], bool]) -> None:
        """Tombstone live entries whose source has lost eligibility."""
        for source, entry in sorted(self.known.items()):
            if not entry.tombstone and not is_eligible(source):
                self.ingest(Entry(source, entry.version, entry.value, True))

    def live_values(self) -> list[float]:
        return [e.value for e in self.known.values() if not e.tombstone]

    def epoch_recompute(self) -> None:
        """Recompute order statistics exactly and drop tombstone values."""
        values = self.live_values()
        self.state = replace(
            self.state,
            min_candidate=min(values) if values else None,
            max_candidate=max(values) if values else None,
            min_stale=False,
            max_stale=False,
            epoch=self.state.epoch + 1,
        )
        for source, entry in list(self.known.items()):
            if entry.tombstone and entry.value is not None:
                # Keep the version as a floor against stale resurrection.
                self.known[source] = Entry(source, entry.version, None, True)


def read_estimate(agent: AggregatorAgent, function: str):
    if not agent.eligible:
        raise NotEligible(f"agent {agent.id} is not eligible for map {agent.map_id}")
    s = agent.state
    if function == "count":
        return s.count
    if function == "sum":
        return float(s.total)
    if function == "mean":
        return s.mean
    if function == "std":
        return s.std
    if function in ("min", "max"):
        if s.count == 0:
            raise EmptyAggregate(f"{function} of an empty aggregate")
        return s.min_candidate if function == "min" else s.max_candidate
    raise AggregateError(f"unknown aggregation function {function!r}")


def random_topology(ids: Sequence[str], degree: int = 4, seed: int | str = 0) -> dict[str, list[str]]:
    """Random ``degree``-regular graph, or the complete graph when impossible."""
    ids = sorted(ids)
    n = len(ids)
    if n <= degree + 1 or (n * degree) % 2:
        return {a: [b for b in ids if b != a] for a in ids}
    rng = random.Random(f"topology:{seed}")
    for _ in range(100):
        g = nx.random_regular_graph(degree, n, seed=rng.randrange(2**32))
        if nx.is_connected(g):
            break
    return {ids[i]: sorted(ids[j] for j in g.neighbors(i)) for i in range(n)}


@dataclass(frozen=True)
class NetworkModel:
    latency_ms: tuple[float, float] = (0.0, 0.0)
    drop: float = 0.0

    def __post_init__(self) -> None:
        lo, hi = self.latency_ms
        if not 0 <= lo <= hi:
            raise AggregateError("latency bounds must satisfy 0 <= min <= max")
        if not 0 <= self.drop < 1:
            raise AggregateError("drop probability must lie in [0, 1)")


@dataclass(frozen=True)
class Delivery:
    time: float
    sender: str
    receiver: str
    message: GossipMessage


def gossip_round(
    agents: Mapping[str, AggregatorAgent],
    topology: Mapping[str, Sequence[str]],
    rng: random.Random,
    fanout: int = 2,
    network: NetworkModel = NetworkModel(),
    now: float = 0.0,
) -> list[Delivery]:
    """Push gossip: each eligible agent sends its entries to ``fanout`` peers."""
    deliveries = []
    for agent_id in sorted(agents):
        agent = agents[agent_id]
        if not agent.eligible:
            continue
        peers = [p for p in topology.get(agent_id, ()) if p in agents and agents[p].eligible]
        if not peers:
            continue
        message = agent.outgoing()
        for target in rng.sample(peers, min(fanout, len(peers))):
            if network.drop and rng.random() < network.drop:
                continue
            lo, hi = network.latency_ms
            delay = rng.uniform(lo, hi) / 1000.0 if hi > 0 else 0.0
            deliveries.append(Delivery(now + delay, agent_id, target, message))
    return deliveries


def deliver(deliveries: Iterable[Delivery], agents: Mapping[str, AggregatorAgent],
            is_eligible: Callable[[str], bool] | None = None) -> None:
    for d in sorted(deliveries, key=lambda d: (d.time, d.sender, d.receiver)):
        agents[d.receiver].receive(d.message, is_eligible)


def oracle(values: Iterable[float]) -> dict[str, float]:
    """From-scratch aggregates over a live input set."""
    vals = list(values)
    if not vals:
        return {"count": 0, "sum": 0.0}
    n = len(vals)
    mean = math.fsum(vals) / n
    return {
        "count": n,
        "sum": math.fsum(vals),
        "mean": mean,
        "std": math.sqrt(math.fsum((v - mean) ** 2 for v in vals) / n),
        "min": min(vals),
        "max": max(vals),
    }
