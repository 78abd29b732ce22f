"""Staked validator network: claim verification, blocks and slashing."""

from .ledger import (
    Block,
    BlockError,
    ChainCheck,
    Ledger,
    World,
    WrongProducer,
    apply_block,
    canonical_json,
    detect_and_slash,
    produce_block,
    verify_chain,
)
from .pipeline import (
    Attestation,
    NoActiveValidators,
    UnservedPoi,
    VerdictRecord,
    apply_verdict,
    attest,
    eligible_verifiers,
    select_producer,
    verify_claim_pipeline,
)
from .state import (
    TREASURY,
    ConsensusConfig,
    ConsensusError,
    EconomicsConfig,
    LedgerState,
    PresenceRecord,
    RegistrationError,
    Validator,
    ValidatorRole,
    ValidatorStatus,
    register_validator,
    settle_epoch,
    slash_validator,
)

__all__ = [name for name in dir() if not name.startswith("_")]
