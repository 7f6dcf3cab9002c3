"""Iteration-bound formulas, the optimal-value oracle and trace checks.

All logarithms are natural.  Bounds are real numbers; a run of ``K``
switching iterations respects a bound ``b`` iff ``K <= floor(b)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .mdp import MdpError, Mdp, apply_T_pi, policy_evaluation, q_values
from .solvers import HOWARD, SIMPLEX, RunTrace, run
from .structure import iter_policies

ENUMERATION_LIMIT = 1024
CONTRACTION_SLACK = 1e-9
# optimality gaps at or below this fraction of (1 + ||v*||) are numerically zero
GAP_NOISE_REL = 1e-11


class OracleInconsistent(MdpError):
    pass


def _ceil(x: float) -> int:
    return int(math.ceil(x))


def _horizon_log(scale: float, gamma: float) -> float:
    """``(scale / (1 - gamma)) * log(scale / (1 - gamma))``."""
    h = scale / (1.0 - gamma)
    return h * math.log(h)


def bound_howard_gamma(n: int, m: int, gamma: float) -> float:
    return float(n * (m - 1) * _ceil(_horizon_log(1.0, gamma)))


def bound_simplex_gamma(n: int, m: int, gamma: float) -> float:
    return float(n * (m - 1) * _ceil(_horizon_log(n, gamma)))


def bound_simplex_gamma2(n: int, m: int, gamma: float) -> float:
    h = 1.0 / (1.0 - gamma)
    return n * n * (m - 1) * (1.0 + 2.0 * h * math.log(h))


def bound_ye(n: int, m: int, gamma: float) -> float:
    """Earlier bound valid for both variants (reference only)."""
    return float(n * (m - 1) * _ceil(n / (1.0 - gamma) * math.log(n * n / (1.0 - gamma))))


def bound_hansen(n: int, m: int, gamma: float) -> float:
    """Earlier bound for Howard's PI (reference only)."""
    return float((n * m + 1) * _ceil(1.0 / (1.0 - gamma) * math.log(n / (1.0 - gamma))))


def bound_eps(n: int, gamma: float, vmax: float, eps: float, variant: str) -> float:
    """Iterations after which the policy is ``eps``-optimal (never negative)."""
    if vmax <= 0.0:
        return 0.0
    if variant == HOWARD:
        k = math.log(vmax / eps) / (1.0 - gamma)
    elif variant == SIMPLEX:
        k = n * math.log(n * vmax / eps) / (1.0 - gamma)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    return float(max(0, _ceil(k)))


def bound_simplex_structural(n: int, m: int, tau_t: float, tau_r: float) -> float:
    log = math.log
    creations = _ceil(tau_r * log(n * tau_r)) + _ceil(tau_r * log(n * tau_t))
    per_creation = (m - 1) * _ceil(n * tau_t * log(n * tau_t)) + _ceil(n * tau_t * log(n * n * tau_t))
    return float(n * n * (m - 1) * creations * per_creation)


def bound_structural_both(n: int, m: int, tau_t: float, tau_r: float) -> float:
    log = math.log
    return float(n * (m - 1) * (_ceil(tau_t * log(n * tau_t)) + _ceil(tau_r * log(n * tau_r))))


@dataclass(frozen=True)
class EventIntervals:
    simplex_class_interval: float
    howard_class_interval: float
    det_simplex_cycle_interval: float
    det_howard_cycle_interval: float
    degenerate: bool


def bound_event_lemmas(n: int, m: int, tau_t: float) -> EventIntervals:
    """Maximal number of iterations between recurrent-class (or cycle) creations."""
    log = math.log
    nt = n * tau_t
    return EventIntervals(
        simplex_class_interval=float(n * ((m - 1) * _ceil(nt * log(nt)) + _ceil(nt * log(n * nt)))),
        howard_class_interval=float(n * m * _ceil(tau_t * log(nt))),
        det_simplex_cycle_interval=float(n * m * _ceil(2 * (n - 1) * log(n))),
        det_howard_cycle_interval=float(n),
        degenerate=n == 1,
    )


@dataclass
class BoundReport:
    name: str
    value: float
    inputs: dict
    applicable: bool = True
    variants: tuple = (HOWARD, SIMPLEX)
    prior_work: bool = False
    degenerate: bool = False

    def to_dict(self):
        d = asdict(self)
        d["variants"] = list(self.variants)
        return d


def gamma_bound_reports(n: int, m: int, gamma: float) -> list[BoundReport]:
    inputs = {"n": n, "m": m, "gamma": gamma}
    return [
        BoundReport("howard_gamma", bound_howard_gamma(n, m, gamma), inputs, variants=(HOWARD,)),
        BoundReport("simplex_gamma", bound_simplex_gamma(n, m, gamma), inputs, variants=(SIMPLEX,)),
        BoundReport("simplex_gamma2", bound_simplex_gamma2(n, m, gamma), inputs, variants=(SIMPLEX,)),
        BoundReport("ye_prior", bound_ye(n, m, gamma), inputs, prior_work=True),
        BoundReport("hansen_prior", bound_hansen(n, m, gamma), inputs, variants=(HOWARD,),
                    prior_work=True),
    ]


def structural_bound_reports(n: int, m: int, tau_t: float, tau_r: float,
                             assumption2: bool) -> list[BoundReport]:
    inputs = {"n": n, "m": m, "tau_t": tau_t, "tau_r": tau_r}
    # every log argument collapses to 1 at n = 1 and the formulas evaluate to 0
    degenerate = n == 1
    return [
        BoundReport("simplex_structural", bound_simplex_structural(n, m, tau_t, tau_r), inputs,
                    variants=(SIMPLEX,), degenerate=degenerate),
        BoundReport("structural_both", bound_structural_both(n, m, tau_t, tau_r), inputs,
                    applicable=assumption2, degenerate=degenerate),
    ]


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports])


def reports_to_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "value", "applicable", "degenerate", "prior_work", "variants", "inputs"])
    for r in reports:
        w.writerow([r.name, format(r.value, ".17g"), r.applicable, r.degenerate, r.prior_work,
                    "|".join(r.variants), json.dumps(r.inputs, sort_keys=True)])
    return buf.getvalue()


def optimal_oracle(mdp: Mdp, limit: int = ENUMERATION_LIMIT):
    """Optimal value and an optimal policy.

    Small instances are solved by evaluating every policy; larger ones by
    Howard's PI with a certified Bellman residual.
    """
    if mdp.n_policies <= limit:
        best_v = None
        best_pi = None
        values = {}
        for pi in iter_policies(mdp, limit):
            v = policy_evaluation(mdp, pi)
            values[pi] = v
            best_v = v.copy() if best_v is None else np.maximum(best_v, v)
        tol = 1e-9 * (1.0 + float(np.max(np.abs(best_v))))
        for pi, v in values.items():
            if np.all(v >= best_v - tol):
                best_pi = pi
                break
        if best_pi is None:
            raise OracleInconsistent("no single policy attains the componentwise maximum")
        return best_v, best_pi
    trace = run(mdp, None, HOWARD, track_structure=False, store_values_max_n=0)
    v = trace.final_value
    residual = float(np.max(np.abs(q_values(mdp, v).max(axis=1) - v)))
    if residual > 1e-9 * (1.0 + float(np.max(np.abs(v)))):
        raise OracleInconsistent(f"Howard oracle Bellman residual {residual:.3e}")
    return v, trace.final_policy


@dataclass
class LemmaCheck:
    lemma: str
    coefficient: float | None = None
    passes: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    worst_slack: float = math.inf

    @property
    def ok(self) -> bool:
        return all(self.passes)

    @property
    def violations(self) -> int:
        return sum(1 for p in self.passes if not p)

    def add(self, k: int, before: float, after: float, coef: float, noise: float):
        limit = coef + CONTRACTION_SLACK
        if before <= noise:
            # already optimal up to rounding; the ratio is meaningless
            ratio, ok = 0.0, after <= noise
        else:
            ratio = after / before
            ok = ratio <= limit or after <= noise
        self.iterations.append(k)
        self.ratios.append(ratio)
        self.passes.append(ok)
        self.worst_slack = min(self.worst_slack, limit - ratio)

    def to_dict(self):
        return {
            "lemma": self.lemma,
            "checked": len(self.passes),
            "violations": self.violations,
            "worst_slack": None if math.isinf(self.worst_slack) else self.worst_slack,
        }


def check_contraction(trace: RunTrace, v_star, gamma: float, n: int, *,
                      tau_r: float | None = None, deterministic: bool = False,
                      assumption2: bool = False) -> list[LemmaCheck]:
    """Per-iteration contraction of the optimality gap.

    Howard: sup-norm gap shrinks by ``gamma``.  Simplex: summed gap shrinks by
    ``1 - (1 - gamma)/n``; at iterations that create a recurrent class (a
    cycle, for deterministic MDPs) by ``1 - 1/tau_r`` (``1 - 1/n``).  Under
    the fixed transient/recurrent partition Howard's summed gap also shrinks
    by ``1 - 1/tau_r`` at class creations.
    """
    v_star = np.asarray(v_star, dtype=float)
    noise = GAP_NOISE_REL * (1.0 + float(np.max(np.abs(v_star))))
    inf, l1 = trace.gaps(v_star)
    checks = []
    if trace.variant == HOWARD:
        main = LemmaCheck("hpicontraction", gamma)
        for k in range(trace.iterations):
            main.add(k, inf[k], inf[k + 1], gamma, noise)
    else:
        coef = 1.0 - (1.0 - gamma) / n
        main = LemmaCheck("spicontraction", coef)
        for k in range(trace.iterations):
            main.add(k, l1[k], l1[k + 1], coef, n * noise)
    checks.append(main)

    flagged = [k for k, r in enumerate(trace.records) if r.events and r.events.new_recurrent_class]
    if trace.variant == SIMPLEX:
        if deterministic:
            c = LemmaCheck("spidetpart2", 1.0 - 1.0 / n)
            for k in flagged:
                c.add(k, l1[k], l1[k + 1], 1.0 - 1.0 / n, n * noise)
            checks.append(c)
        if tau_r is not None:
            c = LemmaCheck("spistocpart2", 1.0 - 1.0 / tau_r)
            for k in flagged:
                c.add(k, l1[k], l1[k + 1], 1.0 - 1.0 / tau_r, n * noise)
            checks.append(c)
    elif assumption2 and tau_r is not None:
        c = LemmaCheck("hpistocpart2", 1.0 - 1.0 / tau_r)
        for k in flagged:
            c.add(k, l1[k], l1[k + 1], 1.0 - 1.0 / tau_r, n * noise)
        checks.append(c)
    return checks


def check_monotone(trace: RunTrace, atol: float = 1e-9) -> LemmaCheck:
    """Values never decrease along a trace and no policy repeats."""
    c = LemmaCheck("monotone")
    values = trace.values()
    seen = {trace.initial_policy}
    for k, rec in enumerate(trace.records):
        ok = bool(np.all(values[k + 1] >= values[k] - atol)) and rec.policy_after not in seen
        seen.add(rec.policy_after)
        c.iterations.append(k)
        c.passes.append(ok)
        c.ratios.append(float(np.min(values[k + 1] - values[k])))
    c.worst_slack = min(c.ratios, default=math.inf)
    return c


@dataclass
class BoundCheck:
    results: dict
    failed: list
    truncated: bool

    @property
    def ok(self) -> bool:
        return not self.failed


def check_bounds(trace: RunTrace, reports) -> BoundCheck:
    """Compare a completed run against every applicable bound for its variant.

    Truncated runs are reported but never counted as violations.
    """
    results, failed = {}, []
    for r in reports:
        if not r.applicable or r.degenerate or trace.variant not in r.variants:
            continue
        if not trace.terminated:
            results[r.name] = None
            continue
        ok = trace.iterations <= math.floor(r.value)
        results[r.name] = ok
        if not ok:
            failed.append(r.name)
    return BoundCheck(results, failed, not trace.terminated)


def event_windows(trace: RunTrace, deterministic: bool = False) -> list[int]:
    """Lengths of the stretches between class-creation events, start and end included."""
    marks = [0]
    for k, rec in enumerate(trace.records):
        flag = rec.events.cycle_created if deterministic else rec.events.new_recurrent_class
        if flag:
            marks.append(k + 1)
    if trace.terminated:
        marks.append(trace.iterations)
    return [b - a for a, b in zip(marks, marks[1:])]


def elimination_diagnostics(mdp: Mdp, trace: RunTrace, v_star) -> dict:
    """Where the initial policy is worst against ``v*`` and when that action is dropped for good.

    Purely informational.
    """
    v_star = np.asarray(v_star, dtype=float)
    deficit = v_star - apply_T_pi(mdp, trace.initial_policy, v_star)
    s0 = int(np.argmax(deficit))
    a0 = trace.initial_policy[s0]
    last_use = max(k for k, pi in enumerate(trace.policies) if pi[s0] == a0)
    return {
        "state": s0,
        "action": a0,
        "deficit": float(deficit[s0]),
        "abandoned_at": None if last_use == trace.iterations else last_use + 1,
        "k_star_howard": _ceil(_horizon_log(1.0, mdp.gamma)),
    }
