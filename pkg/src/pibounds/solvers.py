"""Howard's policy iteration and Simplex policy iteration with per-iteration traces."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import structure
from .mdp import (
    MdpError,
    Mdp,
    Policy,
    as_policy,
    default_tol,
    lookahead,
    policy_evaluation,
    solve_dense,
    switch,
)

HOWARD = "howard"
SIMPLEX = "simplex"
VARIANTS = (HOWARD, SIMPLEX)
STORE_VALUES_MAX_N = 64


class MaxIterExceeded(MdpError):
    def __init__(self, trace: "RunTrace"):
        self.trace = trace
        super().__init__(
            f"{trace.variant} PI did not terminate within max_iter={trace.max_iter} "
            f"({trace.iterations} switching iterations)"
        )


class CacheInconsistent(MdpError):
    pass


@dataclass(frozen=True)
class Terminated:
    """Returned by a step function when no state is switchable."""

    max_advantage: float


@dataclass(frozen=True)
class Step:
    policy: Policy
    switched: frozenset
    max_advantage: float
    switchable: frozenset


@dataclass
class IterationRecord:
    k: int
    policy_before: Policy
    policy_after: Policy
    value_before: np.ndarray | None
    max_advantage: float
    switched_states: frozenset
    switchable_states: frozenset
    recurrent_classes_after: tuple | None = None
    events: structure.Events | None = None
    value_sum_before: float = math.nan
    value_max_before: float = math.nan


@dataclass
class RunTrace:
    variant: str
    records: list
    final_policy: Policy
    final_value: np.ndarray
    initial_policy: Policy
    terminated: bool = True
    max_iter: int | None = None
    final_max_advantage: float = 0.0
    initial_classes: tuple | None = field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def policies(self) -> list:
        return [self.initial_policy] + [r.policy_after for r in self.records]

    def values(self) -> list:
        """Value vectors of ``pi_0 .. pi_K`` (requires stored values)."""
        out = [r.value_before for r in self.records] + [self.final_value]
        if any(v is None for v in out):
            raise ValueError("trace does not store per-iteration value vectors")
        return out

    def gaps(self, v_star) -> tuple[list, list]:
        v_star = np.asarray(v_star, dtype=float)
        inf, l1 = [], []
        for v in self.values():
            d = np.maximum(v_star - v, 0.0)
            inf.append(float(d.max()))
            l1.append(float(d.sum()))
        return inf, l1

    def to_dict(self, v_star=None) -> dict:
        out = {
            "variant": self.variant,
            "iterations": self.iterations,
            "terminated": self.terminated,
            "switched": [sorted(r.switched_states) for r in self.records],
            "gaps_inf": None,
            "gaps_l1": None,
            "events": [r.events.to_dict() if r.events else None for r in self.records],
            "final_policy": list(self.final_policy),
        }
        if v_star is not None:
            out["gaps_inf"], out["gaps_l1"] = self.gaps(v_star)
        return out

    def to_json(self, v_star=None) -> str:
        return json.dumps(self.to_dict(v_star))


def _step_from_value(mdp, pi, v, tol, variant):
    a, movable, greedy = lookahead(mdp, pi, v, tol)
    max_adv = float(a.max())
    if not movable:
        return Terminated(max_adv)
    if variant == HOWARD:
        Y = movable
    else:
        # np.argmax returns the lowest index among exact ties
        Y = frozenset({int(np.argmax(a))})
    return Step(switch(pi, greedy, Y, movable), Y, max_adv, movable)


def howard_step(mdp: Mdp, pi: Sequence[int], tol: float | None = None):
    """Switch every switchable state to its greedy action, or report termination."""
    pi = as_policy(mdp, pi)
    return _step_from_value(mdp, pi, policy_evaluation(mdp, pi), tol, HOWARD)


def simplex_step(mdp: Mdp, pi: Sequence[int], tol: float | None = None):
    """Switch only the state of maximal advantage (lowest index on ties)."""
    pi = as_policy(mdp, pi)
    return _step_from_value(mdp, pi, policy_evaluation(mdp, pi), tol, SIMPLEX)


@dataclass(frozen=True)
class InverseCache:
    """``(I - gamma P_pi)^{-1}`` and ``v_pi`` for one policy, updated by rank one changes."""

    policy: Policy
    inverse: np.ndarray
    value: np.ndarray

    @classmethod
    def build(cls, mdp: Mdp, pi: Sequence[int]) -> "InverseCache":
        pi = as_policy(mdp, pi)
        A = np.eye(mdp.n) - mdp.gamma * mdp.transition_matrix(pi)
        B = solve_dense(A, np.eye(mdp.n))
        return cls(pi, B, B @ mdp.reward_vector(pi))

    def residual(self, mdp: Mdp) -> float:
        rows = np.arange(mdp.n)
        pv = mdp.transitions[rows, self.policy] @ self.value
        r = mdp.rewards[rows, self.policy]
        return float(np.max(np.abs(self.value - r - mdp.gamma * pv)))

    def switched(self, mdp: Mdp, state: int, action: int) -> "InverseCache":
        """Cache for the policy that differs from ``self.policy`` only at ``state``.

        Row ``state`` of ``A = I - gamma P`` changes by ``w = -gamma (p_new - p_old)``;
        Sherman-Morrison gives ``B' = B - (B e_s)(w^T B) / (1 + w^T B e_s)``.
        """
        old = self.policy[state]
        w = -mdp.gamma * (mdp.transitions[state, action] - mdp.transitions[state, old])
        B = self.inverse
        col = B[:, state]
        wB = w @ B
        denom = 1.0 + wB[state]
        if abs(denom) < 1e-14:
            raise CacheInconsistent("Sherman-Morrison denominator vanished")
        B_new = B.copy()
        B_new -= np.outer(col / denom, wB)
        pi = list(self.policy)
        pi[state] = int(action)
        pi = tuple(pi)
        cache = InverseCache(pi, B_new, B_new @ mdp.reward_vector(pi))
        res = cache.residual(mdp)
        if res > 1e-10 * (1.0 + float(np.max(np.abs(cache.value)))):
            raise CacheInconsistent(f"residual {res:.3e} after rank-one update")
        return cache


def simplex_step_sm(mdp: Mdp, cache: InverseCache, tol: float | None = None):
    """Simplex step evaluated through the cached inverse.

    Returns ``(Step | Terminated, cache for the new policy)``; the new cache
    costs O(n^2) instead of a fresh O(n^3) solve.
    """
    step = _step_from_value(mdp, cache.policy, cache.value, tol, SIMPLEX)
    if isinstance(step, Terminated):
        return step, cache
    (s,) = step.switched
    return step, cache.switched(mdp, s, step.policy[s])


def default_max_iter(mdp: Mdp, variant: str) -> int:
    from . import bounds

    if variant == HOWARD:
        b = bounds.bound_howard_gamma(mdp.n, mdp.m, mdp.gamma)
    else:
        b = min(
            bounds.bound_simplex_gamma(mdp.n, mdp.m, mdp.gamma),
            bounds.bound_simplex_gamma2(mdp.n, mdp.m, mdp.gamma),
        )
    return int(math.floor(b)) + 1


def run(
    mdp: Mdp,
    pi0: Sequence[int] | None = None,
    variant: str = HOWARD,
    tol: float | None = None,
    max_iter: int | None = None,
    *,
    track_structure: bool = True,
    store_values_max_n: int = STORE_VALUES_MAX_N,
    sherman_morrison: bool = False,
    raise_on_limit: bool = True,
) -> RunTrace:
    """Run policy iteration from ``pi0`` (default: action 0 everywhere).

    ``max_iter`` counts step evaluations, the final terminating one included,
    so a run that stops after ``K`` switches needs ``max_iter >= K + 1``.  The
    default is the tightest discount-dependent iteration bound plus one.
    When the limit is hit, :class:`MaxIterExceeded` is raised with the partial
    trace, or the trace is returned with ``terminated=False`` if
    ``raise_on_limit`` is false.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if sherman_morrison and variant != SIMPLEX:
        raise ValueError("the Sherman-Morrison path only applies to Simplex-PI")
    pi = as_policy(mdp, [0] * mdp.n if pi0 is None else pi0)
    if max_iter is None:
        max_iter = default_max_iter(mdp, variant)
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    store = mdp.n <= store_values_max_n
    deterministic = mdp.is_deterministic if track_structure else False
    cls = structure.classify(mdp, pi) if track_structure else None
    initial_classes = cls.with_actions if cls is not None else None

    cache = InverseCache.build(mdp, pi) if sherman_morrison else None
    v = cache.value if cache is not None else policy_evaluation(mdp, pi)
    records: list[IterationRecord] = []
    initial = pi
    for k in range(max_iter):
        if cache is not None:
            try:
                step, new_cache = simplex_step_sm(mdp, cache, tol)
            except CacheInconsistent:
                cache = InverseCache.build(mdp, cache.policy)
                step, new_cache = simplex_step_sm(mdp, cache, tol)
        else:
            step = _step_from_value(mdp, pi, v, tol, variant)
        if isinstance(step, Terminated):
            return RunTrace(variant, records, pi, v, initial, True, max_iter,
                            step.max_advantage, initial_classes)
        rec = IterationRecord(
            k=k,
            policy_before=pi,
            policy_after=step.policy,
            value_before=v if store else None,
            max_advantage=step.max_advantage,
            switched_states=step.switched,
            switchable_states=step.switchable,
            value_sum_before=float(v.sum()),
            value_max_before=float(v.max()),
        )
        if track_structure:
            new_cls = structure.classify(mdp, step.policy)
            rec.recurrent_classes_after = new_cls.with_actions
            rec.events = structure.events_between(cls, new_cls, deterministic)
            cls = new_cls
        records.append(rec)
        pi = step.policy
        if cache is not None:
            cache = new_cache
            v = cache.value
        else:
            v = policy_evaluation(mdp, pi)
    trace = RunTrace(variant, records, pi, v, initial, False, max_iter, math.nan, initial_classes)
    if raise_on_limit:
        raise MaxIterExceeded(trace)
    return trace


def final_bellman_gap(mdp: Mdp, trace: RunTrace) -> float:
    """``||T v - v||_inf`` at the final policy."""
    v = trace.final_value
    q = mdp.rewards + mdp.gamma * (mdp.transitions @ v)
    return float(np.max(np.abs(q.max(axis=1) - v)))


__all__ = [
    "HOWARD",
    "SIMPLEX",
    "VARIANTS",
    "CacheInconsistent",
    "InverseCache",
    "IterationRecord",
    "MaxIterExceeded",
    "RunTrace",
    "Step",
    "Terminated",
    "default_max_iter",
    "default_tol",
    "final_bellman_gap",
    "howard_step",
    "run",
    "simplex_step",
    "simplex_step_sm",
]
