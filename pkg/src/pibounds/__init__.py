"""Exact policy iteration for discounted MDPs with iteration-bound verification."""

from .mdp import (
    Mdp,
    advantage,
    apply_T,
    apply_T_pi,
    policy_evaluation,
    switch,
    switchable_set,
    validate,
)
from .solvers import HOWARD, SIMPLEX, RunTrace, howard_step, run, simplex_step

__version__ = "0.1.0"

__all__ = [
    "HOWARD",
    "SIMPLEX",
    "Mdp",
    "RunTrace",
    "advantage",
    "apply_T",
    "apply_T_pi",
    "howard_step",
    "policy_evaluation",
    "run",
    "simplex_step",
    "switch",
    "switchable_set",
    "validate",
]
