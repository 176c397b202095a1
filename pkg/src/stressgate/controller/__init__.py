"""Outer design loop, interpreter strategies and the action vocabulary."""
from .actions import (
    ACTION_KINDS, GLOBAL_KINDS, SPATIAL_KINDS, Action, apply_action, first_admissible,
    validate_action,
)
from .llm import HTTPClient, LLMStrategy, StubClient, propose_llm
from .loop import LoopConfig, OuterLoopDesigner, RunTrace, StepRecord, retained_eligible, run_outer_loop
from .strategies import (
    ExactHotspotStrategy, InterpreterContext, Proposal, RandomRegionStrategy, RuleBasedStrategy,
    propose_exact_hotspot, propose_random_region, propose_redistribute, propose_rule_based,
)

__all__ = [
    "ACTION_KINDS", "GLOBAL_KINDS", "SPATIAL_KINDS", "Action", "ExactHotspotStrategy", "HTTPClient",
    "InterpreterContext", "LLMStrategy", "LoopConfig", "OuterLoopDesigner", "Proposal",
    "RandomRegionStrategy", "RuleBasedStrategy", "RunTrace", "StepRecord", "StubClient",
    "apply_action", "first_admissible", "propose_exact_hotspot", "propose_llm",
    "propose_random_region", "propose_redistribute", "propose_rule_based", "retained_eligible",
    "run_outer_loop", "validate_action",
]
