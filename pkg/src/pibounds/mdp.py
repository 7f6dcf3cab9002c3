"""Finite discounted MDP model and exact Bellman machinery.

An MDP holds a dense transition tensor ``transitions[i, a, j] = p_ij(a)`` and
expected immediate rewards ``rewards[i, a]``.  Policies are deterministic and
stationary, represented as tuples of action indices so they can be hashed and
compared exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

ROW_SUM_TOL = 1e-12
ADVANTAGE_REL_TOL = 1e-10
RESIDUAL_REL_TOL = 1e-10

Policy = tuple


class MdpError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(MdpError, ValueError):
    pass


class RowNotStochastic(ValidationError):
    def __init__(self, state: int, action: int, total: float, reason: str = "sum"):
        self.state, self.action, self.total = state, action, total
        super().__init__(
            f"transition row (state={state}, action={action}) is not stochastic: "
            f"{reason}={total!r}"
        )


class GammaOutOfRange(ValidationError):
    def __init__(self, gamma):
        self.gamma = gamma
        super().__init__(f"discount factor must lie in (0, 1), got {gamma!r}")


class NonFiniteReward(ValidationError):
    def __init__(self, state: int, action: int, value):
        self.state, self.action, self.value = state, action, value
        super().__init__(f"reward at (state={state}, action={action}) is {value!r}")


class InvalidPolicy(ValidationError):
    pass


class SingularSystem(MdpError, ArithmeticError):
    pass


class InternalInconsistency(MdpError, RuntimeError):
    """A numerical invariant that theory guarantees was violated."""


class EmptySwitchSet(MdpError, ValueError):
    pass


class NotSwitchable(MdpError, ValueError):
    def __init__(self, state: int):
        self.state = state
        super().__init__(f"state {state} is not switchable")


@dataclass(frozen=True, eq=False)
class Mdp:
    """A finite MDP with ``n`` states, ``m`` actions per state and discount ``gamma``.

    The constructor only checks array shapes; call :func:`validate` to check
    stochasticity, the discount range and reward finiteness.
    """

    n: int
    m: int
    gamma: float
    transitions: np.ndarray
    rewards: np.ndarray

    def __post_init__(self):
        if int(self.n) < 1 or int(self.m) < 1:
            raise ValidationError(f"n and m must be positive, got n={self.n}, m={self.m}")
        P = np.array(self.transitions, dtype=np.float64)
        r = np.array(self.rewards, dtype=np.float64)
        if P.shape != (self.n, self.m, self.n):
            raise ValidationError(
                f"transitions must have shape {(self.n, self.m, self.n)}, got {P.shape}"
            )
        if r.shape != (self.n, self.m):
            raise ValidationError(f"rewards must have shape {(self.n, self.m)}, got {r.shape}")
        P.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", r)

    def __eq__(self, other):
        if not isinstance(other, Mdp):
            return NotImplemented
        return (
            self.n == other.n
            and self.m == other.m
            and self.gamma == other.gamma
            and np.array_equal(self.transitions, other.transitions)
            and np.array_equal(self.rewards, other.rewards)
        )

    __hash__ = None

    @property
    def is_deterministic(self) -> bool:
        P = self.transitions
        return bool(np.all((P == 0.0) | (P == 1.0)) and np.all(np.count_nonzero(P, axis=2) == 1))

    @property
    def n_policies(self) -> int:
        return self.m**self.n

    @property
    def vmax(self) -> float:
        """Uniform bound ``max_pi ||r_pi||_inf / (1 - gamma)`` on every value function."""
        return float(np.max(np.abs(self.rewards))) / (1.0 - self.gamma)

    def transition_matrix(self, pi: Sequence[int]) -> np.ndarray:
        return self.transitions[np.arange(self.n), np.asarray(pi, dtype=np.intp)]

    def reward_vector(self, pi: Sequence[int]) -> np.ndarray:
        return self.rewards[np.arange(self.n), np.asarray(pi, dtype=np.intp)]

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "gamma": self.gamma,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Mdp":
        return cls(
            n=data["n"],
            m=data["m"],
            gamma=data["gamma"],
            transitions=data["transitions"],
            rewards=data["rewards"],
        )

    def to_json(self) -> str:
        # json emits repr() of floats, which round-trips float64 exactly
        return json.dumps(self.to_dict())


def validate(mdp: Mdp) -> None:
    """Raise a :class:`ValidationError` subclass unless every model invariant holds."""
    if not (0.0 < mdp.gamma < 1.0) or math.isnan(mdp.gamma):
        raise GammaOutOfRange(mdp.gamma)
    P = mdp.transitions
    for i in range(mdp.n):
        for a in range(mdp.m):
            row = P[i, a]
            if not np.all(np.isfinite(row)) or np.any(row < 0.0):
                raise RowNotStochastic(i, a, float(row.min()), reason="min entry")
            total = float(row.sum())
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise RowNotStochastic(i, a, total)
    bad = np.argwhere(~np.isfinite(mdp.rewards))
    if len(bad):
        i, a = (int(x) for x in bad[0])
        raise NonFiniteReward(i, a, float(mdp.rewards[i, a]))


def as_policy(mdp: Mdp, pi: Iterable[int]) -> Policy:
    """Normalize ``pi`` to a tuple of ints and check it against ``mdp``."""
    actions = tuple(int(a) for a in pi)
    if len(actions) != mdp.n:
        raise InvalidPolicy(f"policy has length {len(actions)}, expected {mdp.n}")
    for i, a in enumerate(actions):
        if not 0 <= a < mdp.m:
            raise InvalidPolicy(f"action {a} at state {i} outside [0, {mdp.m})")
    return actions


def solve_dense(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    if not np.all(np.isfinite(x)):
        raise SingularSystem("solution contains non-finite entries")
    return x


def policy_evaluation(mdp: Mdp, pi: Sequence[int]) -> np.ndarray:
    """Return ``v_pi`` by solving ``(I - gamma P_pi) v = r_pi`` directly."""
    pi = as_policy(mdp, pi)
    P = mdp.transition_matrix(pi)
    r = mdp.reward_vector(pi)
    v = solve_dense(np.eye(mdp.n) - mdp.gamma * P, r)
    residual = np.max(np.abs(v - (r + mdp.gamma * P @ v)))
    if residual > RESIDUAL_REL_TOL * (1.0 + np.max(np.abs(v))):
        raise SingularSystem(f"Bellman residual {residual:.3e} after direct solve")
    return v


def apply_T_pi(mdp: Mdp, pi: Sequence[int], v) -> np.ndarray:
    pi = as_policy(mdp, pi)
    return mdp.reward_vector(pi) + mdp.gamma * mdp.transition_matrix(pi) @ np.asarray(v, dtype=float)


def q_values(mdp: Mdp, v) -> np.ndarray:
    """One-step lookahead ``r(i, a) + gamma * p(i, a) . v`` for every pair."""
    return mdp.rewards + mdp.gamma * (mdp.transitions @ np.asarray(v, dtype=float))


def greedy_from_q(q: np.ndarray, current: Sequence[int] | None = None, tol: float = 0.0) -> Policy:
    """Greedy actions with the package tie rule.

    The current action is kept when it is within ``tol`` of the row maximum,
    otherwise the lowest-index maximizer is chosen.
    """
    best = np.argmax(q, axis=1)
    if current is not None:
        cur = np.asarray(current, dtype=np.intp)
        rows = np.arange(q.shape[0])
        keep = q[rows, cur] >= q[rows, best] - tol
        best = np.where(keep, cur, best)
    return tuple(int(a) for a in best)


def apply_T(mdp: Mdp, v, current: Sequence[int] | None = None, tol: float = 0.0):
    """Return ``(T v, greedy policy)``."""
    q = q_values(mdp, v)
    return q.max(axis=1), greedy_from_q(q, current, tol)


def default_tol(v) -> float:
    return ADVANTAGE_REL_TOL * (1.0 + float(np.max(np.abs(v))))


def advantage_from_value(mdp: Mdp, v: np.ndarray, q: np.ndarray | None = None) -> np.ndarray:
    if q is None:
        q = q_values(mdp, v)
    a = q.max(axis=1) - v
    floor = -default_tol(v)
    if np.any(a < floor):
        i = int(np.argmin(a))
        raise InternalInconsistency(
            f"advantage {a[i]:.3e} at state {i} is below -{-floor:.3e}; "
            "value vector is not the value of the given policy"
        )
    return np.maximum(a, 0.0)


def advantage(mdp: Mdp, pi: Sequence[int]) -> np.ndarray:
    """``a_pi = T v_pi - v_pi``, clamped at zero after a consistency check."""
    return advantage_from_value(mdp, policy_evaluation(mdp, pi))


def switchable_set(mdp: Mdp, pi: Sequence[int], tol: float | None = None) -> frozenset:
    v = policy_evaluation(mdp, pi)
    a = advantage_from_value(mdp, v)
    if tol is None:
        tol = default_tol(v)
    return frozenset(int(i) for i in np.flatnonzero(a > tol))


def switch(pi: Sequence[int], greedy: Sequence[int], Y: Iterable[int], switchable=None) -> Policy:
    """Take the greedy action on ``Y`` and keep ``pi`` elsewhere.

    A state of ``Y`` is rejected when ``switchable`` is given and does not
    contain it, or when the greedy action equals the current one.
    """
    Y = sorted({int(i) for i in Y})
    if not Y:
        raise EmptySwitchSet("switch requires a non-empty set of states")
    out = list(pi)
    for i in Y:
        if (switchable is not None and i not in switchable) or greedy[i] == pi[i]:
            raise NotSwitchable(i)
        out[i] = int(greedy[i])
    return tuple(out)


def lookahead(mdp: Mdp, pi: Policy, v: np.ndarray, tol: float | None = None):
    """Advantage, switchable states and tie-ruled greedy policy for ``(pi, v_pi)``.

    Greedy actions are taken from the advantage itself so the switchable set and
    the greedy policy can never disagree about which states change.
    """
    q = q_values(mdp, v)
    a = advantage_from_value(mdp, v, q)
    if tol is None:
        tol = default_tol(v)
    movable = a > tol
    greedy = np.where(movable, np.argmax(q, axis=1), np.asarray(pi, dtype=np.intp))
    return a, frozenset(int(i) for i in np.flatnonzero(movable)), tuple(int(x) for x in greedy)
