"""Competitive equilibria for Fisher markets with divisible chores."""

from .certify import Certificate, KktWitness, certify_ce, check_kkt_dual, check_kkt_redundant, kkt_duality_gap
from .gfw import GfwConfig, GfwResult, run
from .market import ChoresInstance, DualPoint, EquilibriumCandidate, MarketError, load_instance, save_instance

__all__ = [
    "Certificate",
    "ChoresInstance",
    "DualPoint",
    "EquilibriumCandidate",
    "GfwConfig",
    "GfwResult",
    "KktWitness",
    "MarketError",
    "certify_ce",
    "check_kkt_dual",
    "check_kkt_redundant",
    "kkt_duality_gap",
    "load_instance",
    "run",
    "save_instance",
]
