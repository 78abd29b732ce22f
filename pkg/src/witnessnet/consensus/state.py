"""Validator set, token balances and the staking economy.

All token amounts are integers. Burns (entry costs, existence costs,
slashing penalties) and mints (block rewards) are tracked so that token
conservation can be asserted at every height.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping

from ..crowdsense import PointOfInterest
from ..geo import GeoPoint
from ..proofs import Beacon, ProofConfig

TREASURY = "treasury"


class ConsensusError(ValueError):
    pass


class RegistrationError(ConsensusError):
    pass


class ValidatorRole(str, enum.Enum):
    LOCATION = "location"
    SOCIAL = "social"
    FULL = "full"


class ValidatorStatus(str, enum.Enum):
    ACTIVE = "active"
    EXITED = "exited"
    SLASHED = "slashed"


@dataclass(frozen=True)
class EconomicsConfig:
    entry_cost: int = 10
    existence_cost: int = 1
    exit_penalty_fraction: float = 0.5
    claim_fee: int = 1
    block_reward: int = 2
    min_stake: int = 100
    epoch_length: int = 100

    def __post_init__(self) -> None:
        for name in ("entry_cost", "existence_cost", "claim_fee", "block_reward", "min_stake"):
            if getattr(self, name) < 0:
                raise ConsensusError(f"{name} must be >= 0")
        if not 0 < self.exit_penalty_fraction <= 1:
            raise ConsensusError("exit_penalty_fraction must lie in (0, 1]")
        if self.epoch_length < 1:
            raise ConsensusError("epoch_length must be >= 1")

    def penalty(self, stake: int) -> int:
        return int(Fraction(str(self.exit_penalty_fraction)) * stake)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "EconomicsConfig":
        d = dict(d or {})
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConsensusError(f"unknown economics keys: {sorted(unknown)}")
        kwargs = {k: (float(v) if k == "exit_penalty_fraction" else int(v)) for k, v in d.items()}
        return cls(**kwargs)


@dataclass(frozen=True)
class ConsensusConfig:
    economics: EconomicsConfig = EconomicsConfig()
    proof: ProofConfig = ProofConfig()
    slash_threshold: int = 3
    # Attesting stake needed, as a fraction of the eligible set's stake.
    quorum: float = 2 / 3

    def to_dict(self) -> dict:
        return {
            "economics": self.economics.to_dict(),
            "proof": self.proof.to_dict(),
            "slash_threshold": self.slash_threshold,
            "quorum": self.quorum,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConsensusConfig":
        return cls(
            EconomicsConfig.from_dict(d.get("economics")),
            ProofConfig.from_dict(d.get("proof")),
            int(d.get("slash_threshold", 3)),
            float(d.get("quorum", 2 / 3)),
        )


@dataclass
class Validator:
    key: str
    stake: int
    role: ValidatorRole
    served_pois: frozenset[str] = frozenset()
    status: ValidatorStatus = ValidatorStatus.ACTIVE

    @property
    def active(self) -> bool:
        return self.status is ValidatorStatus.ACTIVE

    def copy(self) -> "Validator":
        return Validator(self.key, self.stake, self.role, self.served_pois, self.status)


@dataclass(frozen=True)
class PresenceRecord:
    claimant: str
    poi_id: str
    asset_id: str
    question_id: str
    time: float
    position: GeoPoint
    claim_digest: str
    height: int
    used_beacons: tuple[str, ...] = ()

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.claimant, self.poi_id, self.asset_id, self.question_id)


@dataclass
class LedgerState:
    """Mutable world state reached by applying blocks from genesis."""

    seed: int | str
    config: ConsensusConfig
    pois: Mapping[str, PointOfInterest]
    beacons: Mapping[str, Beacon]
    balances: dict[str, int] = field(default_factory=dict)
    validators: dict[str, Validator] = field(default_factory=dict)
    slashed_keys: set[str] = field(default_factory=set)
    ignored_beacons: set[str] = field(default_factory=set)
    registry: dict[tuple[str, str, str, str], PresenceRecord] = field(default_factory=dict)
    presence: dict[tuple[str, str], dict[tuple, float]] = field(default_factory=dict)
    history: dict[str, list[tuple[float, GeoPoint]]] = field(default_factory=dict)
    nonces: dict[str, set[str]] = field(default_factory=dict)
    exclusions: dict[str, int] = field(default_factory=dict)
    beacon_claims: dict[str, object] = field(default_factory=dict)
    pool: int = 0
    burned: int = 0
    minted: int = 0
    initial_supply: int = 0
    height: int = -1
    tip_hash: str = ""

    def clone(self) -> "LedgerState":
        return LedgerState(
            seed=self.seed,
            config=self.config,
            pois=self.pois,
            beacons=self.beacons,
            balances=dict(self.balances),
            validators={k: v.copy() for k, v in self.validators.items()},
            slashed_keys=set(self.slashed_keys),
            ignored_beacons=set(self.ignored_beacons),
            registry=dict(self.registry),
            presence={k: dict(v) for k, v in self.presence.items()},
            history={k: list(v) for k, v in self.history.items()},
            nonces={k: set(v) for k, v in self.nonces.items()},
            exclusions=dict(self.exclusions),
            beacon_claims=dict(self.beacon_claims),
            pool=self.pool,
            burned=self.burned,
            minted=self.minted,
            initial_supply=self.initial_supply,
            height=self.height,
            tip_hash=self.tip_hash,
        )

    @property
    def economics(self) -> EconomicsConfig:
        return self.config.economics

    def active_validators(self) -> list[Validator]:
        return [v for _, v in sorted(self.validators.items()) if v.active]

    def put_record(self, record: PresenceRecord) -> None:
        self.registry[record.key] = record
        self.presence.setdefault((record.claimant, record.poi_id), {})[record.key] = record.time

    def drop_record(self, key: tuple[str, str, str, str]) -> PresenceRecord:
        record = self.registry.pop(key)
        slot = self.presence[(record.claimant, record.poi_id)]
        del slot[key]
        if not slot:
            del self.presence[(record.claimant, record.poi_id)]
        return record

    def presence_times(self, key: str, poi_id: str) -> list[float]:
        return sorted(set(self.presence.get((key, poi_id), {}).values()))

    def has_presence(self, key: str, poi_id: str) -> bool:
        return (key, poi_id) in self.presence

    def staked_total(self) -> int:
        return sum(v.stake for v in self.validators.values())

    def circulating(self) -> int:
        return sum(self.balances.values()) + self.staked_total() + self.pool

    def conserved(self) -> bool:
        """initial + minted == circulating + burned."""
        return self.initial_supply + self.minted == self.circulating() + self.burned

    def balance_sheet(self) -> dict:
        return {
            "initial_supply": self.initial_supply,
            "minted": self.minted,
            "burned": self.burned,
            "balances": sum(self.balances.values()),
            "staked": self.staked_total(),
            "pool": self.pool,
            "conserved": self.conserved(),
        }


def register_validator(
    state: LedgerState,
    key: str,
    deposit: int,
    role: ValidatorRole | str,
    served_pois: Iterable[str] = (),
) -> Validator:
    """Stake ``deposit`` from ``key``'s balance; entry cost is burned."""
    econ = state.economics
    role = ValidatorRole(role)
    if key in state.slashed_keys:
        raise RegistrationError(f"key {key[:12]} was slashed and cannot rejoin")
    if key in state.validators and state.validators[key].active:
        raise RegistrationError(f"key {key[:12]} is already an active validator")
    if deposit < econ.entry_cost + econ.min_stake:
        raise RegistrationError(
            f"deposit {deposit} below entry_cost + min_stake = {econ.entry_cost + econ.min_stake}"
        )
    if state.balances.get(key, 0) < deposit:
        raise RegistrationError(f"balance {state.balances.get(key, 0)} cannot cover deposit {deposit}")
    served = frozenset(served_pois)
    unknown = served - set(state.pois)
    if unknown:
        raise RegistrationError(f"unknown served pois: {sorted(unknown)}")
    state.balances[key] -= deposit
    state.burned += econ.entry_cost
    validator = Validator(key, deposit - econ.entry_cost, role, served)
    state.validators[key] = validator
    return validator


def slash_validator(state: LedgerState, key: str) -> dict:
    """Burn the penalty share of ``key``'s stake and refund the remainder."""
    v = state.validators[key]
    burn = state.economics.penalty(v.stake)
    refund = v.stake - burn
    state.burned += burn
    state.balances[key] = state.balances.get(key, 0) + refund
    v.stake = 0
    v.status = ValidatorStatus.SLASHED
    state.slashed_keys.add(key)
    return {"burned": burn, "refunded": refund}


def settle_epoch(state: LedgerState) -> list[dict]:
    """Charge the existence cost; validators left under ``min_stake`` exit."""
    econ = state.economics
    events = []
    for v in state.active_validators():
        charge = min(econ.existence_cost, v.stake)
        v.stake -= charge
        state.burned += charge
        if v.stake < econ.min_stake:
            refund = v.stake
            state.balances[v.key] = state.balances.get(v.key, 0) + refund
            v.stake = 0
            v.status = ValidatorStatus.EXITED
            events.append({"type": "exit", "validator": v.key, "charged": charge, "refunded": refund})
    state.exclusions.clear()
    return events
