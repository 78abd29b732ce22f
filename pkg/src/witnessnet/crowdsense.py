"""Crowd-sensing projects: assets, questions, tasks, assignments.

Question prompts are edge-triggered: a point of interest fires once when the
participant enters its fence under the asset's navigation modality, and only
fires again after the participant has left and come back.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .geo import GeoPoint, Geofence, fence_from_dict, fence_to_dict, inside_geofence


class CrowdsenseError(ValueError):
    pass


class InadmissibleAnswer(CrowdsenseError):
    pass


class NavigationModality(str, enum.Enum):
    ARBITRARY = "arbitrary"
    SEQUENTIAL = "sequential"
    INTERACTIVE = "interactive"


class QuestionKind(str, enum.Enum):
    RADIO = "radio"
    CHECKBOX = "checkbox"
    LIKERT = "likert"
    TEXTBOX = "textbox"


@dataclass(frozen=True)
class Option:
    label: str
    value: int
    reward: int = 0


@dataclass(frozen=True)
class Question:
    id: str
    kind: QuestionKind
    prompt: str
    options: tuple[Option, ...] = ()

    def __post_init__(self) -> None:
        kind = QuestionKind(self.kind)
        object.__setattr__(self, "kind", kind)
        values = [o.value for o in self.options]
        if len(set(values)) != len(values):
            raise CrowdsenseError(f"question {self.id}: duplicate option values")
        if kind in (QuestionKind.RADIO, QuestionKind.CHECKBOX) and len(self.options) < 2:
            raise CrowdsenseError(f"question {self.id}: {kind.value} needs >= 2 options")
        if kind is QuestionKind.TEXTBOX and self.options:
            raise CrowdsenseError(f"question {self.id}: textbox takes no options")
        if kind is QuestionKind.LIKERT:
            if not values:
                raise CrowdsenseError(f"question {self.id}: likert needs a value range")
            if sorted(values) != list(range(min(values), max(values) + 1)):
                raise CrowdsenseError(f"question {self.id}: likert values must be contiguous")

    def check(self, answer) -> None:
        """Raise :class:`InadmissibleAnswer` unless ``answer`` fits this question."""
        values = {o.value for o in self.options}
        if self.kind is QuestionKind.TEXTBOX:
            if not isinstance(answer, str) or not answer.strip():
                raise InadmissibleAnswer(f"{self.id}: textbox answer must be non-empty text")
            return
        if self.kind is QuestionKind.CHECKBOX:
            if not isinstance(answer, (list, tuple)) or not answer:
                raise InadmissibleAnswer(f"{self.id}: checkbox answer must be a non-empty list")
            if len(set(answer)) != len(answer) or not set(answer) <= values:
                raise InadmissibleAnswer(f"{self.id}: checkbox answer {answer!r} not admissible")
            return
        if isinstance(answer, bool) or not isinstance(answer, int) or answer not in values:
            raise InadmissibleAnswer(f"{self.id}: answer {answer!r} not in {sorted(values)}")

    def reward(self, answer) -> int:
        chosen = set(answer) if self.kind is QuestionKind.CHECKBOX else {answer}
        return sum(o.reward for o in self.options if o.value in chosen)

    def numeric_value(self, answer, option: int | None = None) -> float | None:
        """Aggregatable value of an answer; checkbox options become 0/1 indicators."""
        if self.kind is QuestionKind.TEXTBOX:
            return None
        if self.kind is QuestionKind.CHECKBOX:
            if option is None:
                raise CrowdsenseError(f"{self.id}: checkbox aggregation needs an option value")
            return 1.0 if option in answer else 0.0
        return float(answer)


@dataclass(frozen=True)
class PointOfInterest:
    id: str
    name: str
    fence: Geofence
    questions: tuple[Question, ...]
    proof_mode: str = "gps_oracle"
    challenge_answer: str | None = None
    qr_secret: str | None = None
    required_social: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.questions:
            raise CrowdsenseError(f"poi {self.id}: at least one question required")
        if self.proof_mode not in ("gps_oracle", "beacon"):
            raise CrowdsenseError(f"poi {self.id}: unknown proof mode {self.proof_mode!r}")

    @property
    def center(self) -> GeoPoint:
        return self.fence.center

    def question(self, question_id: str) -> Question:
        for q in self.questions:
            if q.id == question_id:
                return q
        raise KeyError(f"poi {self.id} has no question {question_id!r}")


@dataclass(frozen=True)
class Asset:
    id: str
    pois: tuple[PointOfInterest, ...]
    modality: NavigationModality = NavigationModality.ARBITRARY
    branch_map: dict[tuple[str, int], str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "modality", NavigationModality(self.modality))
        ids = [p.id for p in self.pois]
        if not ids:
            raise CrowdsenseError(f"asset {self.id}: no points of interest")
        if len(set(ids)) != len(ids):
            raise CrowdsenseError(f"asset {self.id}: duplicate poi ids")
        for (src, _), dst in self.branch_map.items():
            if src not in ids or dst not in ids:
                raise CrowdsenseError(f"asset {self.id}: branch {src}->{dst} leaves the asset")

    def poi(self, poi_id: str) -> PointOfInterest:
        for p in self.pois:
            if p.id == poi_id:
                return p
        raise KeyError(f"asset {self.id} has no poi {poi_id!r}")

    def missing_branches(self) -> list[tuple[str, int]]:
        """(poi, answer) pairs with no branch; these end an interactive walk."""
        if self.modality is not NavigationModality.INTERACTIVE:
            return []
        missing = []
        for p in self.pois:
            q = p.questions[0]
            for o in q.options:
                if (p.id, o.value) not in self.branch_map:
                    missing.append((p.id, o.value))
        return missing


@dataclass(frozen=True)
class Response:
    participant: str
    poi_id: str
    question_id: str
    answer: object
    timestamp: float

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.participant, self.poi_id, self.question_id)

    def to_dict(self) -> dict:
        answer = list(self.answer) if isinstance(self.answer, tuple) else self.answer
        return {
            "participant": self.participant,
            "poi": self.poi_id,
            "question": self.question_id,
            "answer": answer,
            "timestamp": float(self.timestamp),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Response":
        answer = tuple(d["answer"]) if isinstance(d["answer"], list) else d["answer"]
        return cls(d["participant"], d["poi"], d["question"], answer, float(d["timestamp"]))


@dataclass(frozen=True)
class ResponseChange:
    """Emitted when a task stores or supersedes a response."""

    participant: str
    poi_id: str
    question_id: str
    old: object | None
    new: object
    version: int


@dataclass
class Task:
    id: str
    responses: dict[tuple[str, str, str], Response] = field(default_factory=dict)
    versions: dict[tuple[str, str, str], int] = field(default_factory=dict)

    def answers(self, poi_id: str, question_id: str) -> dict[str, object]:
        return {
            r.participant: r.answer
            for r in self.responses.values()
            if r.poi_id == poi_id and r.question_id == question_id
        }


def record_response(
    r: Response, task: Task, question: Question, *, triggered: bool = True
) -> ResponseChange:
    """Store ``r`` in ``task``, superseding any earlier response to the same question."""
    if not triggered:
        raise CrowdsenseError(f"response {r.key} was not triggered by a localization event")
    question.check(r.answer)
    prior = task.responses.get(r.key)
    task.responses[r.key] = r
    version = task.versions.get(r.key, 0) + 1
    task.versions[r.key] = version
    return ResponseChange(
        r.participant, r.poi_id, r.question_id, None if prior is None else prior.answer, r.answer, version
    )


@dataclass(frozen=True)
class ParticipantFilter:
    keys: tuple[str, ...] | None = None
    fraction: float | None = None

    def select(self, population: Iterable[str], seed: int | str = 0) -> tuple[str, ...]:
        pool = sorted(set(population))
        if self.keys is not None:
            return tuple(k for k in sorted(set(self.keys)) if k in pool)
        if self.fraction is not None:
            if not 0.0 <= self.fraction <= 1.0:
                raise CrowdsenseError(f"sampling fraction {self.fraction} out of [0, 1]")
            k = round(self.fraction * len(pool))
            return tuple(sorted(random.Random(f"assign:{seed}").sample(pool, k)))
        return tuple(pool)


@dataclass(frozen=True)
class Assignment:
    id: str
    asset_id: str
    task_id: str
    participants: tuple[str, ...]


@dataclass
class AssetProgress:
    """Per-participant navigation state for one asset."""

    asset_id: str
    cursor: int = 0
    target: str | None = None
    ended: bool = False
    answered: list[str] = field(default_factory=list)
    inside: set[str] = field(default_factory=set)
    prompted: set[str] = field(default_factory=set)


def launch_assignment(
    assignment_id: str,
    asset: Asset,
    task: Task,
    participant_filter: ParticipantFilter,
    population: Iterable[str],
    seed: int | str = 0,
) -> tuple[Assignment, dict[str, AssetProgress]]:
    chosen = participant_filter.select(population, seed)
    if not chosen:
        raise CrowdsenseError(f"assignment {assignment_id}: filter selects no participants")
    first = asset.pois[0].id if asset.modality is NavigationModality.INTERACTIVE else None
    progress = {key: AssetProgress(asset.id, target=first) for key in chosen}
    return Assignment(assignment_id, asset.id, task.id, chosen), progress


FenceFor = Callable[[PointOfInterest], Geofence]


def localization_events(
    position: GeoPoint,
    progress: AssetProgress,
    asset: Asset,
    fence_for: FenceFor | None = None,
) -> list[str]:
    """Advance ``progress`` to ``position`` and return newly triggered poi ids.

    Leaving a fence re-arms it; a poi is returned at most once per visit.
    """
    fence_for = fence_for or (lambda poi: poi.fence)
    inside_now = {p.id for p in asset.pois if inside_geofence(position, fence_for(p))}
    progress.prompted &= inside_now
    progress.inside = inside_now
    if progress.ended:
        return []

    if asset.modality is NavigationModality.ARBITRARY:
        allowed = [p.id for p in asset.pois]
    elif asset.modality is NavigationModality.SEQUENTIAL:
        allowed = [asset.pois[progress.cursor].id] if progress.cursor < len(asset.pois) else []
    else:
        allowed = [progress.target] if progress.target is not None else []

    fired = [pid for pid in allowed if pid in inside_now and pid not in progress.prompted]
    progress.prompted.update(fired)
    return fired


def mark_answered(progress: AssetProgress, asset: Asset, poi_id: str, answer=None) -> None:
    """Advance navigation after a participant answers at ``poi_id``."""
    progress.answered.append(poi_id)
    if asset.modality is NavigationModality.SEQUENTIAL:
        if progress.cursor < len(asset.pois) and asset.pois[progress.cursor].id == poi_id:
            progress.cursor += 1
        if progress.cursor >= len(asset.pois):
            progress.ended = True
    elif asset.modality is NavigationModality.INTERACTIVE:
        # Missing branch ends the walk.
        progress.target = asset.branch_map.get((poi_id, answer))
        if progress.target is None:
            progress.ended = True


@dataclass
class Project:
    id: str
    assets: dict[str, Asset] = field(default_factory=dict)
    tasks: dict[str, Task] = field(default_factory=dict)
    assignments: dict[str, Assignment] = field(default_factory=dict)

    def validate(self) -> list[str]:
        errors = []
        for a in self.assignments.values():
            if a.asset_id not in self.assets:
                errors.append(f"assignment {a.id}: unknown asset {a.asset_id!r}")
            if a.task_id not in self.tasks:
                errors.append(f"assignment {a.id}: unknown task {a.task_id!r}")
        return errors


def question_to_dict(q: Question) -> dict:
    return {
        "id": q.id,
        "kind": q.kind.value,
        "prompt": q.prompt,
        "options": [{"label": o.label, "value": o.value, "reward": o.reward} for o in q.options],
    }


def question_from_dict(d: dict) -> Question:
    options = tuple(Option(str(o["label"]), int(o["value"]), int(o.get("reward", 0))) for o in d.get("options", ()))
    if d["kind"] == "likert" and not options and "range" in d:
        lo, hi = d["range"]
        options = tuple(Option(str(v), v, int(d.get("reward", 0))) for v in range(int(lo), int(hi) + 1))
    return Question(str(d["id"]), QuestionKind(d["kind"]), str(d.get("prompt", "")), options)


def poi_to_dict(p: PointOfInterest) -> dict:
    return {
        "id": p.id,
        "name": p.name,
        "fence": fence_to_dict(p.fence),
        "questions": [question_to_dict(q) for q in p.questions],
        "proof_mode": p.proof_mode,
        "challenge_answer": p.challenge_answer,
        "qr_secret": p.qr_secret,
        "required_social": list(p.required_social),
    }


def poi_from_dict(d: dict) -> PointOfInterest:
    center = GeoPoint.from_list(d["center"]) if "center" in d else None
    return PointOfInterest(
        str(d["id"]),
        str(d.get("name", d["id"])),
        fence_from_dict(d["fence"], center),
        tuple(question_from_dict(q) for q in d.get("questions", ())),
        d.get("proof_mode", "gps_oracle"),
        d.get("challenge_answer"),
        d.get("qr_secret"),
        tuple(d.get("required_social", ())),
    )
