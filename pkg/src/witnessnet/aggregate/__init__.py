"""Gossip-based collective measurement over presence-verified participants."""

from .bloom import BloomFilter
from .gossip import (
    FUNCTIONS,
    AggregateError,
    AggregateState,
    AggregatorAgent,
    BloomMemory,
    Classification,
    Delivery,
    EmptyAggregate,
    Entry,
    GossipMessage,
    MapKind,
    MeasurementMap,
    NetworkModel,
    NotEligible,
    apply,
    classify,
    deliver,
    eligibility,
    gossip_round,
    oracle,
    random_topology,
    read_estimate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
