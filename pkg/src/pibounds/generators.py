"""Seeded MDP instance families and the MDP JSON file format.

Randomness comes from numpy's PCG64 bit generator seeded with the 64-bit
``seed``.  Draw order is fixed: transition rows state-major then action,
followed by the reward table in the same order.  Dirichlet(1) rows are drawn
as normalized standard exponentials.  Absent transitions are exact zeros.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .mdp import MdpError, Mdp, ValidationError, validate

FAMILIES = ("dense_random", "deterministic", "garnet", "two_block_assumption2")
DRAIN_MASS = 0.1
BACKBONE_MASS = 0.5


class InvalidSpec(MdpError, ValueError):
    pass


class ParseError(MdpError, ValueError):
    pass


@dataclass(frozen=True)
class GenSpec:
    family: str
    n: int
    m: int
    gamma: float
    seed: int = 0
    reward_range: tuple = (0.0, 1.0)
    branching: int | None = None
    t: int | None = None
    r: int | None = None

    def check(self) -> None:
        if self.family not in FAMILIES:
            raise InvalidSpec(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 1 or self.m < 1:
            raise InvalidSpec(f"n and m must be positive, got n={self.n}, m={self.m}")
        if not 0.0 < self.gamma < 1.0:
            raise InvalidSpec(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0 <= self.seed < 2**64:
            raise InvalidSpec("seed must be a 64-bit unsigned integer")
        lo, hi = self.reward_range
        if not lo <= hi:
            raise InvalidSpec("reward_range must satisfy lo <= hi")
        if self.family == "garnet":
            if self.branching is None or not 1 <= self.branching <= self.n:
                raise InvalidSpec("garnet requires 1 <= branching <= n")
        if self.family == "two_block_assumption2":
            t, r = self.block_sizes()
            if t < 0 or r < 1 or t + r != self.n:
                raise InvalidSpec("two_block_assumption2 requires t + r = n and r >= 1")

    def block_sizes(self) -> tuple[int, int]:
        if self.t is None and self.r is None:
            return self.n // 2, self.n - self.n // 2
        if self.t is None:
            return self.n - self.r, self.r
        if self.r is None:
            return self.t, self.n - self.t
        return self.t, self.r

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reward_range"] = list(self.reward_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        if "reward_range" in d:
            d["reward_range"] = tuple(d["reward_range"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from exc

    def digest(self) -> str:
        return f"n={self.n} m={self.m} gamma={self.gamma!r} family={self.family} seed={self.seed}"


def _dirichlet(rng: np.random.Generator, k: int) -> np.ndarray:
    w = rng.standard_exponential(k)
    return w / w.sum()


def _dense_row(rng, n):
    return _dirichlet(rng, n)


def _deterministic_row(rng, n):
    row = np.zeros(n)
    row[rng.integers(n)] = 1.0
    return row


def _garnet_row(rng, n, b):
    row = np.zeros(n)
    support = np.sort(rng.choice(n, size=b, replace=False))
    row[support] = _dirichlet(rng, b)
    return row


def _two_block_rows(rng, spec):
    """Transient block ``0..t-1`` drains into the recurrent block ``t..n-1``.

    Recurrent rows keep half their mass on the cyclic successor inside the
    recurrent block, so that block is one closed communicating class under
    every policy.  A transient state ``i`` only reaches transient states with a
    smaller index, and always puts at least ``DRAIN_MASS`` on the recurrent
    block.
    """
    t, r = spec.block_sizes()
    n, m = spec.n, spec.m
    P = np.zeros((n, m, n))
    for i in range(n):
        for a in range(m):
            row = np.zeros(n)
            if i >= t:
                nxt = t + (i - t + 1) % r
                row[t:] = (1.0 - BACKBONE_MASS) * _dirichlet(rng, r)
                row[nxt] += BACKBONE_MASS
            else:
                row[t:] = DRAIN_MASS * _dirichlet(rng, r)
                allowed = np.r_[np.arange(i), np.arange(t, n)]
                row[allowed] += (1.0 - DRAIN_MASS) * _dirichlet(rng, len(allowed))
            P[i, a] = row / row.sum()
    return P


def generate(spec: GenSpec) -> Mdp:
    spec.check()
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n, m = spec.n, spec.m
    if spec.family == "two_block_assumption2":
        P = _two_block_rows(rng, spec)
    else:
        P = np.zeros((n, m, n))
        for i in range(n):
            for a in range(m):
                if spec.family == "dense_random":
                    P[i, a] = _dense_row(rng, n)
                elif spec.family == "deterministic":
                    P[i, a] = _deterministic_row(rng, n)
                else:
                    P[i, a] = _garnet_row(rng, n, spec.branching)
    lo, hi = spec.reward_range
    R = rng.uniform(lo, hi, size=(n, m))
    mdp = Mdp(n, m, spec.gamma, P, R)
    validate(mdp)
    return mdp


def loads(text: str) -> Mdp:
    try:
        data = json.loads(text)
        mdp = Mdp.from_dict(data)
    except ValidationError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"malformed MDP JSON: {exc}") from exc
    validate(mdp)
    return mdp


def load(path) -> Mdp:
    return loads(Path(path).read_text())


def save(mdp: Mdp, path) -> None:
    Path(path).write_text(mdp.to_json() + "\n")
