"""Recurrent/transient structure of policies and the constants tau_t, tau_r.

A state is recurrent for a policy when it lies in a strongly connected
component of the policy graph (edge ``i -> j`` iff ``p_ij(pi(i)) > 0``) that
has no edge leaving it.  Every other state is transient.
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .mdp import InternalInconsistency, MdpError, Mdp, as_policy, solve_dense

DEFAULT_BUDGET = 10**6
TRANSIENT = -1


class BudgetExceeded(MdpError):
    def __init__(self, n_policies: int, budget: int):
        self.n_policies, self.budget = n_policies, budget
        super().__init__(f"{n_policies} policies exceed the enumeration budget {budget}")


def default_budget() -> int:
    return int(os.environ.get("PI_BOUNDS_BUDGET", DEFAULT_BUDGET))


def strongly_connected_components(succ: Sequence[Sequence[int]]) -> list[list[int]]:
    """Tarjan's algorithm with an explicit stack.

    Components come out in reverse topological order of the condensation:
    a component is emitted only after every component reachable from it.
    """
    n = len(succ)
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    sccs: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] != -1:
            continue
        work = [(root, 0)]
        while work:
            v, pos = work.pop()
            if pos == 0:
                index[v] = low[v] = counter
                counter += 1
                stack.append(v)
                on_stack[v] = True
            recurse = False
            edges = succ[v]
            while pos < len(edges):
                w = edges[pos]
                pos += 1
                if index[w] == -1:
                    work.append((v, pos))
                    work.append((w, 0))
                    recurse = True
                    break
                if on_stack[w]:
                    low[v] = min(low[v], index[w])
            if recurse:
                continue
            if low[v] == index[v]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp.append(w)
                    if w == v:
                        break
                sccs.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[v])
    return sccs


@dataclass(frozen=True)
class Classification:
    """Per-state labels (``-1`` transient, otherwise class id) and recurrent classes.

    ``with_actions[c]`` is the policy restricted to class ``c`` as sorted
    ``(state, action)`` pairs; it is the identity used to tell classes apart.
    """

    labels: tuple
    classes: tuple
    with_actions: tuple

    @property
    def recurrent(self) -> frozenset:
        return frozenset(i for i, c in enumerate(self.labels) if c != TRANSIENT)

    @property
    def transient(self) -> frozenset:
        return frozenset(i for i, c in enumerate(self.labels) if c == TRANSIENT)

    def is_recurrent(self, i: int) -> bool:
        return self.labels[i] != TRANSIENT


def policy_graph(mdp: Mdp, pi: Sequence[int]) -> list[list[int]]:
    P = mdp.transition_matrix(pi)
    return [np.flatnonzero(P[i] > 0.0).tolist() for i in range(mdp.n)]


def classify(mdp: Mdp, pi: Sequence[int]) -> Classification:
    pi = as_policy(mdp, pi)
    succ = policy_graph(mdp, pi)
    comp_of = [0] * mdp.n
    sccs = strongly_connected_components(succ)
    for c, comp in enumerate(sccs):
        for i in comp:
            comp_of[i] = c
    closed = [
        comp for c, comp in enumerate(sccs)
        if all(comp_of[j] == c for i in comp for j in succ[i])
    ]
    closed.sort(key=lambda comp: comp[0])
    labels = [TRANSIENT] * mdp.n
    for c, comp in enumerate(closed):
        for i in comp:
            labels[i] = c
    return Classification(
        labels=tuple(labels),
        classes=tuple(frozenset(comp) for comp in closed),
        with_actions=tuple(tuple((i, pi[i]) for i in comp) for comp in closed),
    )


def _x_bounds(mdp: Mdp):
    upper = mdp.n / (1.0 - mdp.gamma)
    return upper, upper * (1 + 1e-12) + 1e-9


def visitation(mdp: Mdp, pi: Sequence[int]) -> np.ndarray:
    """Discounted visitation ``x_pi = (I - gamma P_pi^T)^{-1} 1``."""
    pi = as_policy(mdp, pi)
    P = mdp.transition_matrix(pi)
    x = solve_dense(np.eye(mdp.n) - mdp.gamma * P.T, np.ones(mdp.n))
    total, upper = _x_bounds(mdp)
    if np.any(x < 1.0 - 1e-9) or np.any(x > upper):
        raise InternalInconsistency(f"visitation vector out of [1, n/(1-gamma)]: {x}")
    if abs(x.sum() - total) > 1e-8 * total:
        raise InternalInconsistency(f"visitation mass {x.sum()!r} differs from {total!r}")
    return x


def iter_policies(mdp: Mdp, budget: int | None = None):
    """All policies in lexicographic order of their action vectors."""
    budget = default_budget() if budget is None else budget
    if mdp.n_policies > budget:
        raise BudgetExceeded(mdp.n_policies, budget)
    return itertools.product(range(mdp.m), repeat=mdp.n)


@dataclass(frozen=True)
class Witness:
    policy: tuple
    state: int
    x: float

    def to_dict(self):
        return {"policy": list(self.policy), "state": self.state, "x": self.x}


@dataclass
class StructuralReport:
    tau_t: float
    tau_r: float
    policies_enumerated: int
    assumption2_holds: bool
    partition: tuple | None = None
    witness_tau_t: Witness | None = None
    witness_tau_r: Witness | None = None
    assumption2_witness: tuple | None = None
    gamma: float = field(default=float("nan"), repr=False)

    def to_dict(self) -> dict:
        return {
            "tau_t": self.tau_t,
            "tau_r": self.tau_r,
            "policies_enumerated": self.policies_enumerated,
            "assumption2": self.assumption2_holds,
            "partition": (
                {"T": sorted(self.partition[0]), "R": sorted(self.partition[1])}
                if self.partition is not None else None
            ),
            "witness_tau_t": self.witness_tau_t.to_dict() if self.witness_tau_t else None,
            "witness_tau_r": self.witness_tau_r.to_dict() if self.witness_tau_r else None,
            "assumption2_witness": (
                {"state": self.assumption2_witness[0],
                 "policy_recurrent": list(self.assumption2_witness[1]),
                 "policy_transient": list(self.assumption2_witness[2])}
                if self.assumption2_witness is not None else None
            ),
        }


class _Assumption2Tracker:
    def __init__(self, n: int):
        self.seen_recurrent: list = [None] * n
        self.seen_transient: list = [None] * n

    def add(self, pi, cls: Classification):
        for i, c in enumerate(cls.labels):
            slot = self.seen_transient if c == TRANSIENT else self.seen_recurrent
            if slot[i] is None:
                slot[i] = pi

    def result(self):
        n = len(self.seen_recurrent)
        for i in range(n):
            if self.seen_recurrent[i] is not None and self.seen_transient[i] is not None:
                return False, None, (i, self.seen_recurrent[i], self.seen_transient[i])
        T = frozenset(i for i in range(n) if self.seen_recurrent[i] is None)
        return True, (T, frozenset(range(n)) - T), None


def structural_constants(mdp: Mdp, budget: int | None = None) -> StructuralReport:
    """Enumerate every policy and return the smallest tau_t, tau_r (both at least 1)."""
    scale = mdp.n / (1.0 - mdp.gamma)
    tau_t, tau_r = 1.0, 1.0
    w_t = w_r = None
    tracker = _Assumption2Tracker(mdp.n)
    count = 0
    for pi in iter_policies(mdp, budget):
        count += 1
        cls = classify(mdp, pi)
        x = visitation(mdp, pi)
        tracker.add(pi, cls)
        for i in range(mdp.n):
            if cls.labels[i] == TRANSIENT:
                if x[i] > tau_t or (w_t is None and x[i] >= tau_t):
                    tau_t, w_t = max(tau_t, float(x[i])), Witness(pi, i, float(x[i]))
            else:
                ratio = scale / x[i]
                if ratio > tau_r or (w_r is None and ratio >= tau_r):
                    tau_r, w_r = max(tau_r, float(ratio)), Witness(pi, i, float(x[i]))
    holds, partition, counterexample = tracker.result()
    return StructuralReport(
        tau_t=tau_t,
        tau_r=tau_r,
        policies_enumerated=count,
        assumption2_holds=holds,
        partition=partition,
        witness_tau_t=w_t,
        witness_tau_r=w_r,
        assumption2_witness=counterexample,
        gamma=mdp.gamma,
    )


@dataclass(frozen=True)
class Assumption1Violation:
    policy: tuple
    state: int
    x: float
    kind: str


def check_assumption1(mdp: Mdp, report: StructuralReport, budget: int | None = None):
    """Re-verify the visitation inequalities for every policy.

    Returns ``(True, None)`` or ``(False, first violation)``.
    """
    upper = mdp.n / (1.0 - mdp.gamma)
    lower_r = upper / report.tau_r
    for pi in iter_policies(mdp, budget):
        cls = classify(mdp, pi)
        x = visitation(mdp, pi)
        for i in range(mdp.n):
            if cls.labels[i] == TRANSIENT:
                if not (1.0 - 1e-9 <= x[i] <= report.tau_t + 1e-9):
                    return False, Assumption1Violation(pi, i, float(x[i]), "transient")
            elif not (lower_r - 1e-9 <= x[i] <= upper + 1e-9):
                return False, Assumption1Violation(pi, i, float(x[i]), "recurrent")
    return True, None


@dataclass(frozen=True)
class Assumption2Result:
    holds: bool
    partition: tuple | None
    witness: tuple | None

    def __bool__(self):
        return self.holds


def check_assumption2(mdp: Mdp, budget: int | None = None) -> Assumption2Result:
    """Whether every state keeps the same transient/recurrent label under all policies.

    ``partition`` is ``(T, R)``; ``witness`` is ``(state, policy where recurrent,
    policy where transient)``.
    """
    tracker = _Assumption2Tracker(mdp.n)
    for pi in iter_policies(mdp, budget):
        tracker.add(pi, classify(mdp, pi))
    return Assumption2Result(*tracker.result())


@dataclass(frozen=True)
class Events:
    new_recurrent_class: bool = False
    recurrent_class_broken: bool = False
    cycle_created: bool = False

    def to_dict(self):
        return {
            "new_recurrent_class": self.new_recurrent_class,
            "recurrent_class_broken": self.recurrent_class_broken,
            "cycle_created": self.cycle_created,
        }


def class_keys(cls: Classification) -> set:
    return set(cls.with_actions)


def events_between(before: Classification, after: Classification, deterministic: bool) -> Events:
    kb, ka = class_keys(before), class_keys(after)
    new = bool(ka - kb)
    return Events(
        new_recurrent_class=new,
        recurrent_class_broken=bool(kb - ka),
        cycle_created=new and deterministic,
    )


def detect_events(mdp: Mdp, pi_before: Sequence[int], pi_after: Sequence[int]) -> Events:
    """A class is new when no class of the other policy has the same states and actions."""
    return events_between(classify(mdp, pi_before), classify(mdp, pi_after), mdp.is_deterministic)
