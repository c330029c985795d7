"""Batched micro-credit settlement with stake-backed credit and repeated-game incentives."""

from .core import Action, AgentId, Amount, Conduct, EpochIndex, Rate, Role, Transaction, apply_rate
from .incentives import (
    BuyerParams, MerchantParams, buyer_utilities, check_buyer_conditions, check_merchant_conditions,
    delta_threshold, merchant_utilities, suspension_loss,
)
from .sim import ScenarioConfig, one_shot_deviation_scan, run_scenario, sweep_delta

__all__ = [
    "Action", "AgentId", "Amount", "Conduct", "EpochIndex", "Rate", "Role", "Transaction",
    "apply_rate", "BuyerParams", "MerchantParams", "buyer_utilities", "check_buyer_conditions",
    "check_merchant_conditions", "delta_threshold", "merchant_utilities", "suspension_loss",
    "ScenarioConfig", "one_shot_deviation_scan", "run_scenario", "sweep_delta",
]
