"""Proof of witness presence: geofenced crowd-sensing, staked consensus over
location and social proofs, and gossip aggregation among verified witnesses."""

__version__ = "0.1.0"
