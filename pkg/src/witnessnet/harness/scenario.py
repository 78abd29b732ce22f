"""Scenario files: JSON, schema-versioned, validated as a whole.

Every section is parsed even after an error so that :class:`ScenarioError`
lists all problems at once. List sections are re-keyed by id, which makes
the loaded scenario independent of the order entries appear in the file.
"""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from ..aggregate import FUNCTIONS, MapKind, MeasurementMap, NetworkModel
from ..consensus import EconomicsConfig, ValidatorRole
from ..crowdsense import Asset, NavigationModality, PointOfInterest, poi_from_dict
from ..geo import GeoPoint, haversine_distance
from ..proofs import ProofConfig

SCHEMA_VERSION = 1


class ScenarioError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class ParticipantSpec:
    name: str
    radius: float | None = None
    group: str | None = None
    balance: int = 100
    # Reported position = true position shifted (east, north) metres.
    spoof: tuple[float, float] | None = None


@dataclass(frozen=True)
class ValidatorSpec:
    name: str
    deposit: int
    role: ValidatorRole = ValidatorRole.FULL
    served_pois: tuple[str, ...] = ()
    balance: int | None = None


@dataclass(frozen=True)
class BeaconSpec:
    id: str
    position: GeoPoint
    comm_range: float
    clock_offset: float = 0.0
    byzantine: bool = False
    operator: str | None = None


@dataclass(frozen=True)
class AssignmentSpec:
    id: str
    asset: str
    task: str
    participants: tuple[str, ...] | None = None
    fraction: float | None = None


@dataclass(frozen=True)
class MapSpec:
    map: MeasurementMap
    functions: tuple[str, ...] = ("mean",)


@dataclass(frozen=True)
class Intervals:
    block: float = 1.0
    gossip: float = 1.0
    position: float = 1.0


@dataclass(frozen=True)
class GossipConfig:
    fanout: int = 2
    degree: int = 4
    max_drain_rounds: int = 500


@dataclass(frozen=True)
class Validation:
    baseline: Mapping[str, float]
    question: str
    statistics: tuple[str, ...] = ("mean", "median")


Trace = tuple[tuple[float, GeoPoint], ...]


@dataclass(frozen=True)
class Scenario:
    name: str
    seed: int
    duration: float
    intervals: Intervals
    economics: EconomicsConfig
    slash_threshold: int
    quorum: float
    tolerances: ProofConfig
    network: NetworkModel
    gossip: GossipConfig
    ranging_noise: float
    treasury: int
    pois: Mapping[str, PointOfInterest]
    beacons: Mapping[str, BeaconSpec]
    validators: Mapping[str, ValidatorSpec]
    participants: Mapping[str, ParticipantSpec]
    assets: Mapping[str, Asset]
    assignments: Mapping[str, AssignmentSpec]
    maps: Mapping[str, MapSpec]
    answers: Mapping[tuple[str, str, str], object]
    answer_mode: str
    traces: Mapping[str, Trace]
    validation: Validation | None = None
    groups: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=int(seed))

    def echo(self) -> dict:
        """Configuration summary copied into run reports."""
        return {
            "name": self.name,
            "seed": self.seed,
            "duration": self.duration,
            "intervals": vars(self.intervals),
            "economics": self.economics.to_dict(),
            "slash_threshold": self.slash_threshold,
            "quorum": self.quorum,
            "tolerances": self.tolerances.to_dict(),
            "network": {"latency_ms": list(self.network.latency_ms), "drop": self.network.drop},
            "gossip": {"fanout": self.gossip.fanout, "degree": self.gossip.degree},
            "answer_mode": self.answer_mode,
            "counts": {
                "pois": len(self.pois),
                "beacons": len(self.beacons),
                "validators": len(self.validators),
                "participants": len(self.participants),
                "maps": len(self.maps),
            },
        }


def walk(
    waypoints: Sequence[GeoPoint],
    speed: float,
    *,
    start: float = 0.0,
    dwell: float = 0.0,
    until: float | None = None,
) -> list[tuple[float, GeoPoint]]:
    """Straight-line legs between waypoints at constant ``speed`` (m/s)."""
    if speed <= 0:
        raise ValueError("speed must be positive")
    t = start
    samples = [(t, waypoints[0])]
    for a, b in zip(waypoints, waypoints[1:]):
        if dwell > 0 and a is not waypoints[0]:
            t += dwell
            samples.append((t, a))
        t += haversine_distance(a, b) / speed
        samples.append((t, b))
    if until is not None and until > t:
        samples.append((until, waypoints[-1]))
    return samples


def interpolate(trace: Trace, t: float) -> GeoPoint:
    """Linear interpolation in lat/lon; clamps outside the sampled span."""
    if t <= trace[0][0]:
        return trace[0][1]
    if t >= trace[-1][0]:
        return trace[-1][1]
    lo, hi = 0, len(trace) - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if trace[mid][0] <= t:
            lo = mid
        else:
            hi = mid
    (t0, p0), (t1, p1) = trace[lo], trace[hi]
    w = (t - t0) / (t1 - t0)
    return GeoPoint(p0.lat + w * (p1.lat - p0.lat), p0.lon + w * (p1.lon - p0.lon))


def random_answer(seed: int, participant: str, poi: PointOfInterest, question_id: str):
    q = poi.question(question_id)
    rng = random.Random(f"answer:{seed}:{participant}:{poi.id}:{question_id}")
    values = [o.value for o in q.options]
    if q.kind.value == "checkbox":
        return tuple(v for v in values if rng.random() < 0.5)
    return rng.choice(values)


def read_trace_csv(path: Path) -> dict[str, list[tuple[float, GeoPoint]]]:
    traces: dict[str, list] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            point = GeoPoint(float(row["lat"]), float(row["lon"]))
            traces.setdefault(row["participant"], []).append((float(row["timestamp_s"]), point))
    return traces


def write_trace_csv(path: Path, traces: Mapping[str, Sequence[tuple[float, GeoPoint]]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["participant", "timestamp_s", "lat", "lon"])
        for name in sorted(traces):
            for t, p in traces[name]:
                w.writerow([name, repr(float(t)), repr(p.lat), repr(p.lon)])


class _Collector:
    """Accumulates validation errors while parsing continues."""

    def __init__(self) -> None:
        self.errors: list[str] = []

    def guard(self, where: str, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (KeyError, TypeError, ValueError) as exc:
            detail = f"missing field {exc}" if isinstance(exc, KeyError) else str(exc)
            self.errors.append(f"{where}: {detail}")
            return None


def _by_id(items, key, where, col: _Collector) -> dict:
    out = {}
    for item in items:
        if item is None:
            continue
        ident = getattr(item, key)
        if ident in out:
            col.errors.append(f"{where}: duplicate id {ident!r}")
        out[ident] = item
    return dict(sorted(out.items()))


def _parse_asset(d: Mapping, pois: Mapping[str, PointOfInterest], col: _Collector) -> Asset | None:
    missing = [p for p in d["pois"] if p not in pois]
    if missing:
        col.errors.append(f"asset {d['id']}: unknown pois {missing}")
        return None
    branches = {(b["poi"], int(b["answer"])): b["next"] for b in d.get("branches", ())}
    return Asset(
        str(d["id"]),
        tuple(pois[p] for p in d["pois"]),
        NavigationModality(d.get("modality", "arbitrary")),
        branches,
    )


def _parse_map(d: Mapping) -> MapSpec:
    functions = tuple(d.get("functions", ("mean",)))
    unknown = [f for f in functions if f not in FUNCTIONS]
    if unknown:
        raise ValueError(f"unknown aggregation functions {unknown}")
    kind = MapKind(d.get("kind", "distributed"))
    pois = tuple(d["pois"])
    mmap = MeasurementMap(
        str(d["id"]), kind, pois, d["input"]["poi"], d["input"]["question"], d["input"].get("option"),
    )
    return MapSpec(mmap, functions)


def _parse_traces(raw, base: Path | None, col: _Collector) -> dict[str, list]:
    traces: dict[str, list] = {}
    if isinstance(raw, Mapping) and "csv" in raw:
        path = Path(raw["csv"])
        if not path.is_absolute() and base is not None:
            path = base / path
        found = col.guard("traces", read_trace_csv, path)
        return found or {}
    for item in raw or ():
        samples = col.guard(
            f"trace {item.get('participant')}",
            lambda: [(float(t), GeoPoint(float(lat), float(lon))) for t, lat, lon in item["samples"]],
        )
        if samples is not None:
            traces.setdefault(item["participant"], []).extend(samples)
    return traces


def parse_scenario(data: Mapping, base: Path | None = None) -> Scenario:
    col = _Collector()
    if data.get("schema") != SCHEMA_VERSION:
        raise ScenarioError([f"schema mismatch: expected {SCHEMA_VERSION}, got {data.get('schema')!r}"])

    duration = float(data.get("duration", 0))
    if duration <= 0:
        col.errors.append("duration must be positive")
    intervals = col.guard("intervals", lambda: Intervals(**{k: float(v) for k, v in data.get("intervals", {}).items()}))
    economics = col.guard("economics", EconomicsConfig.from_dict, data.get("economics"))
    tolerances = col.guard("tolerances", ProofConfig.from_dict, data.get("tolerances"))
    net = data.get("network", {})
    network = col.guard("network", lambda: NetworkModel(tuple(net.get("latency_ms", (0.0, 0.0))),
                                                         float(net.get("drop", 0.0))))
    gossip = col.guard("gossip", lambda: GossipConfig(**{k: int(v) for k, v in data.get("gossip", {}).items()}))

    pois = _by_id((col.guard(f"poi {p.get('id')}", poi_from_dict, p) for p in data.get("pois", ())),
                  "id", "pois", col)
    beacons = _by_id(
        (col.guard(f"beacon {b.get('id')}", lambda b=b: BeaconSpec(
            str(b["id"]), GeoPoint.from_list(b["position"]), float(b["comm_range"]),
            float(b.get("clock_offset", 0.0)), bool(b.get("byzantine", False)), b.get("operator")))
         for b in data.get("beacons", ())),
        "id", "beacons", col)
    validators = _by_id(
        (col.guard(f"validator {v.get('name')}", lambda v=v: ValidatorSpec(
            str(v["name"]), int(v["deposit"]), ValidatorRole(v.get("role", "full")),
            tuple(v.get("served_pois", ())), v.get("balance")))
         for v in data.get("validators", ())),
        "name", "validators", col)
    participants = _by_id(
        (col.guard(f"participant {p.get('name')}", lambda p=p: ParticipantSpec(
            str(p["name"]), None if p.get("radius") is None else float(p["radius"]), p.get("group"),
            int(p.get("balance", 100)), None if p.get("spoof") is None else tuple(map(float, p["spoof"]))))
         for p in data.get("participants", ())),
        "name", "participants", col)
    assets = _by_id((col.guard(f"asset {a.get('id')}", _parse_asset, a, pois, col) for a in data.get("assets", ())),
                    "id", "assets", col)
    assignments = _by_id(
        (col.guard(f"assignment {a.get('id')}", lambda a=a: AssignmentSpec(
            str(a["id"]), a["asset"], a.get("task", a["id"]),
            None if a.get("participants") is None else tuple(a["participants"]), a.get("fraction")))
         for a in data.get("assignments", ())),
        "id", "assignments", col)
    maps = {}
    for m in data.get("maps", ()):
        spec = col.guard(f"map {m.get('id')}", _parse_map, m)
        if spec is not None:
            maps[spec.map.id] = spec
    maps = dict(sorted(maps.items()))

    answers = {}
    for who, by_poi in sorted(data.get("answers", {}).items()):
        for poi_id, by_q in sorted(by_poi.items()):
            for qid, value in sorted(by_q.items()):
                answers[(who, poi_id, qid)] = tuple(value) if isinstance(value, list) else value
    answer_mode = data.get("answer_mode", "scripted")
    traces = {k: tuple(v) for k, v in sorted(_parse_traces(data.get("traces"), base, col).items())}

    validation = None
    if "validation" in data:
        v = data["validation"]
        validation = col.guard("validation", lambda: Validation(
            {k: float(x) for k, x in v["baseline"].items()}, v["question"], tuple(v.get("statistics", ("mean", "median")))))

    groups: dict[str, list[str]] = {}
    for p in participants.values():
        if p.group is not None:
            groups.setdefault(p.group, []).append(p.name)

    scenario = Scenario(
        name=str(data.get("name", "scenario")),
        seed=int(data.get("seed", 0)),
        duration=duration,
        intervals=intervals or Intervals(),
        economics=economics or EconomicsConfig(),
        slash_threshold=int(data.get("consensus", {}).get("slash_threshold", 3)),
        quorum=float(data.get("consensus", {}).get("quorum", 2 / 3)),
        tolerances=tolerances or ProofConfig(),
        network=network or NetworkModel(),
        gossip=gossip or GossipConfig(),
        ranging_noise=float(data.get("ranging_noise", 0.0)),
        treasury=int(data.get("treasury", 0)),
        pois=pois,
        beacons=beacons,
        validators=validators,
        participants=participants,
        assets=assets,
        assignments=assignments,
        maps=maps,
        answers=answers,
        answer_mode=answer_mode,
        traces=traces,
        validation=validation,
        groups={g: tuple(sorted(v)) for g, v in sorted(groups.items())},
    )
    col.errors.extend(validate(scenario))
    if col.errors:
        raise ScenarioError(col.errors)
    return scenario


def validate(s: Scenario) -> list[str]:
    """Cross-reference and geometry checks on a parsed scenario."""
    errors = []
    if s.answer_mode not in ("scripted", "random"):
        errors.append(f"answer_mode must be 'scripted' or 'random', got {s.answer_mode!r}")
    for name in ("block", "gossip", "position"):
        if getattr(s.intervals, name) <= 0:
            errors.append(f"intervals.{name} must be positive")
    if s.gossip.fanout < 1 or s.gossip.degree < 1:
        errors.append("gossip fanout and degree must be >= 1")
    if not s.validators:
        errors.append("at least one validator is required")
    if not 0 < s.quorum <= 1:
        errors.append("consensus.quorum must lie in (0, 1]")
    if s.ranging_noise < 0:
        errors.append("ranging_noise must be >= 0")

    for p in s.participants.values():
        if p.radius is not None and not p.radius > 0:
            errors.append(f"participant {p.name}: radius must be positive")
        if p.balance < 0:
            errors.append(f"participant {p.name}: balance must be >= 0")
        if p.name in s.validators:
            errors.append(f"participant {p.name}: name clashes with a validator")
    for v in s.validators.values():
        for poi in v.served_pois:
            if poi not in s.pois:
                errors.append(f"validator {v.name}: unknown served poi {poi!r}")
        if v.deposit < s.economics.entry_cost + s.economics.min_stake:
            errors.append(f"validator {v.name}: deposit below entry_cost + min_stake")
    for b in s.beacons.values():
        if b.operator is not None and b.operator not in s.validators:
            errors.append(f"beacon {b.id}: unknown operator {b.operator!r}")
    for poi in s.pois.values():
        if poi.proof_mode == "beacon" and not s.beacons:
            errors.append(f"poi {poi.id}: beacon proof mode without beacons")

    for a in s.assignments.values():
        if a.asset not in s.assets:
            errors.append(f"assignment {a.id}: unknown asset {a.asset!r}")
        for who in a.participants or ():
            if who not in s.participants:
                errors.append(f"assignment {a.id}: unknown participant {who!r}")
        if a.fraction is not None and not 0 <= a.fraction <= 1:
            errors.append(f"assignment {a.id}: fraction must lie in [0, 1]")
    for spec in s.maps.values():
        m = spec.map
        for poi in m.pois:
            if poi not in s.pois:
                errors.append(f"map {m.id}: unknown poi {poi!r}")
        if m.input_poi not in s.pois:
            errors.append(f"map {m.id}: unknown input poi {m.input_poi!r}")
        else:
            try:
                q = s.pois[m.input_poi].question(m.question)
                if q.kind.value == "checkbox" and m.option is None:
                    errors.append(f"map {m.id}: checkbox input needs an option")
                if q.kind.value == "textbox":
                    errors.append(f"map {m.id}: text answers cannot be aggregated")
            except KeyError:
                errors.append(f"map {m.id}: unknown input question {m.question!r}")

    for (who, poi, qid), value in s.answers.items():
        if who not in s.participants:
            errors.append(f"answer: unknown participant {who!r}")
            continue
        if poi not in s.pois:
            errors.append(f"answer {who}: unknown poi {poi!r}")
            continue
        try:
            s.pois[poi].question(qid).check(value)
        except KeyError:
            errors.append(f"answer {who}/{poi}: unknown question {qid!r}")
        except ValueError as exc:
            errors.append(f"answer {who}/{poi}/{qid}: {exc}")

    for who, trace in s.traces.items():
        if who not in s.participants:
            errors.append(f"trace references unknown participant {who!r}")
            continue
        times = [t for t, _ in trace]
        if any(b <= a for a, b in zip(times, times[1:])):
            errors.append(f"trace {who}: timestamps must be strictly increasing")
        if times and (times[0] > 0 or times[-1] < s.duration):
            errors.append(f"trace {who}: samples do not cover [0, {s.duration:g}]")
    for who in s.participants:
        if who not in s.traces:
            errors.append(f"participant {who}: no mobility trace")

    if s.validation is not None:
        for poi in s.validation.baseline:
            if poi not in s.pois:
                errors.append(f"validation: unknown poi {poi!r}")
        for stat in s.validation.statistics:
            if stat not in ("mean", "median"):
                errors.append(f"validation: unknown statistic {stat!r}")
    return errors


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path.name}: not valid JSON ({exc})"]) from exc
    if not isinstance(data, dict):
        raise ScenarioError([f"{path.name}: top level must be an object"])
    return parse_scenario(data, path.parent)


def bundled(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``testnet``."""
    from importlib.resources import files

    stem = name[:-9] if name.endswith(".scenario") else name
    return Path(str(files("witnessnet") / "scenarios" / f"{stem}.scenario"))
