"""Per-instance verification and seeded sweeps."""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import bounds, structure
from .generators import GenSpec, InvalidSpec, generate
from .mdp import Mdp
from .solvers import HOWARD, VARIANTS, MaxIterExceeded, run

CSV_FIELDS = (
    "instance_id", "family", "n", "m", "gamma", "seed", "variant", "iterations",
    "tightest_bound", "bound_ratio", "bounds_passed", "bounds_failed",
    "worst_contraction_slack", "events", "tau_t", "tau_r", "ok", "failures",
)


@dataclass
class Verdict:
    variant: str
    iterations: int
    ok: bool
    failures: list
    bound_results: dict
    lemma_checks: list
    tightest_bound: float
    events: int
    structural: structure.StructuralReport | None = None
    trace: object = field(default=None, repr=False)
    v_star: np.ndarray | None = field(default=None, repr=False)

    @property
    def worst_slack(self) -> float | None:
        slacks = [c.worst_slack for c in self.lemma_checks if not math.isinf(c.worst_slack)]
        return min(slacks) if slacks else None

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "iterations": self.iterations,
            "ok": self.ok,
            "failures": self.failures,
            "bounds": self.bound_results,
            "lemmas": [c.to_dict() for c in self.lemma_checks],
            "tightest_bound": self.tightest_bound,
            "events": self.events,
            "worst_contraction_slack": self.worst_slack,
            "structure": self.structural.to_dict() if self.structural else None,
        }


def tightest_gamma_bound(n: int, m: int, gamma: float, variant: str) -> float:
    if variant == HOWARD:
        return bounds.bound_howard_gamma(n, m, gamma)
    return min(bounds.bound_simplex_gamma(n, m, gamma), bounds.bound_simplex_gamma2(n, m, gamma))


def verify(mdp: Mdp, variant: str, *, tol=None, max_iter=None, budget=None, pi0=None,
           v_star=None, report: structure.StructuralReport | None = None) -> Verdict:
    """Solve, then check the run against the oracle, the contraction lemmas and every bound.

    Structural bounds and class-conditional lemmas are included when the
    policy space fits within ``budget``.
    """
    budget = structure.default_budget() if budget is None else budget
    failures = []
    if v_star is None:
        v_star, _ = bounds.optimal_oracle(mdp)
    try:
        trace = run(mdp, pi0, variant, tol, max_iter)
    except MaxIterExceeded as exc:
        trace = exc.trace
        failures.append("max_iter")
    if report is None and mdp.n_policies <= budget:
        report = structure.structural_constants(mdp, budget)

    reports = bounds.gamma_bound_reports(mdp.n, mdp.m, mdp.gamma)
    if report is not None:
        reports += bounds.structural_bound_reports(
            mdp.n, mdp.m, report.tau_t, report.tau_r, report.assumption2_holds)
    bc = bounds.check_bounds(trace, reports)
    failures += bc.failed

    if trace.terminated:
        gap = float(np.max(np.abs(trace.final_value - v_star)))
        if gap > 1e-8 * max(1.0, float(np.max(np.abs(v_star)))):
            failures.append("optimality")

    checks = bounds.check_contraction(
        trace, v_star, mdp.gamma, mdp.n,
        tau_r=report.tau_r if report else None,
        deterministic=mdp.is_deterministic,
        assumption2=bool(report and report.assumption2_holds),
    )
    checks.append(bounds.check_monotone(trace))
    failures += [c.lemma for c in checks if not c.ok]

    if report is not None and mdp.n > 1:
        ev = bounds.bound_event_lemmas(mdp.n, mdp.m, report.tau_t)
        windows = bounds.event_windows(trace)
        limit = ev.howard_class_interval if variant == HOWARD else ev.simplex_class_interval
        name = "hpistocpart1" if variant == HOWARD else "spistocpart1"
        if windows and max(windows) > limit:
            failures.append(name)
        if mdp.is_deterministic:
            limit = ev.det_howard_cycle_interval if variant == HOWARD else ev.det_simplex_cycle_interval
            name = "hpidetpart1" if variant == HOWARD else "spidetpart1"
            det_windows = bounds.event_windows(trace, True)
            if det_windows and max(det_windows) > limit:
                failures.append(name)

    events = sum(1 for r in trace.records if r.events and r.events.new_recurrent_class)
    return Verdict(
        variant=variant,
        iterations=trace.iterations,
        ok=not failures,
        failures=failures,
        bound_results=bc.results,
        lemma_checks=checks,
        tightest_bound=tightest_gamma_bound(mdp.n, mdp.m, mdp.gamma, variant),
        events=events,
        structural=report,
        trace=trace,
        v_star=v_star,
    )


# --- sweeps -----------------------------------------------------------------

@dataclass
class SweepConfig:
    grids: list
    variants: tuple = VARIANTS
    tol: float | None = None
    budget: int | None = None
    output_dir: str = "sweep_out"
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> "SweepConfig":
        cfg = cls(
            grids=list(d.get("grids") or []),
            variants=tuple(d.get("variants", VARIANTS)),
            tol=d.get("tol"),
            budget=d.get("budget"),
            output_dir=d.get("output_dir", "sweep_out"),
            jobs=int(d.get("jobs", 1)),
        )
        if not cfg.grids:
            raise InvalidSpec("sweep config needs a non-empty 'grids' list")
        for v in cfg.variants:
            if v not in VARIANTS:
                raise InvalidSpec(f"unknown variant {v!r}")
        return cfg

    def instances(self) -> list[tuple[str, GenSpec]]:
        out = []
        for grid in self.grids:
            seeds = grid.get("seeds", [0])
            if isinstance(seeds, dict):
                seeds = list(range(seeds.get("start", 0), seeds.get("start", 0) + seeds["count"]))
            if len(set(seeds)) != len(seeds):
                raise InvalidSpec("seeds within a grid must be distinct")
            ns, ms, gammas = (_as_list(grid[k]) for k in ("n", "m", "gamma"))
            for n, m, g, s in itertools.product(ns, ms, gammas, seeds):
                spec = GenSpec(
                    family=grid["family"], n=n, m=m, gamma=g, seed=s,
                    reward_range=tuple(grid.get("reward_range", (0.0, 1.0))),
                    branching=grid.get("branching"), t=grid.get("t"), r=grid.get("r"),
                )
                spec.check()
                out.append(spec)
        return [(f"{i:06d}", spec) for i, spec in enumerate(out)]


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple)) else [x]


def _verify_instance(task):
    instance_id, spec_dict, variants, tol, budget = task
    spec = GenSpec.from_dict(spec_dict)
    mdp = generate(spec)
    budget = structure.default_budget() if budget is None else budget
    v_star, _ = bounds.optimal_oracle(mdp)
    report = structure.structural_constants(mdp, budget) if mdp.n_policies <= budget else None
    rows = []
    for variant in variants:
        vd = verify(mdp, variant, tol=tol, budget=budget, v_star=v_star, report=report)
        passed = sorted(k for k, ok in vd.bound_results.items() if ok)
        rows.append({
            "instance_id": instance_id,
            "family": spec.family,
            "n": spec.n,
            "m": spec.m,
            "gamma": spec.gamma,
            "seed": spec.seed,
            "variant": variant,
            "iterations": vd.iterations,
            "tightest_bound": vd.tightest_bound,
            "bound_ratio": vd.iterations / vd.tightest_bound if vd.tightest_bound > 0 else 0.0,
            "bounds_passed": passed,
            "bounds_failed": sorted(k for k, ok in vd.bound_results.items() if ok is False),
            "worst_contraction_slack": vd.worst_slack,
            "events": vd.events,
            "tau_t": report.tau_t if report else None,
            "tau_r": report.tau_r if report else None,
            "ok": vd.ok,
            "failures": vd.failures,
        })
    return rows


def run_sweep(cfg: SweepConfig, jobs: int | None = None) -> dict:
    jobs = cfg.jobs if jobs is None else jobs
    tasks = [(iid, spec.to_dict(), cfg.variants, cfg.tol, cfg.budget)
             for iid, spec in cfg.instances()]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_verify_instance, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        chunks = [_verify_instance(t) for t in tasks]
    rows = sorted((r for chunk in chunks for r in chunk),
                  key=lambda r: (r["instance_id"], cfg.variants.index(r["variant"])))
    aggregate = {}
    for r in rows:
        key = f"{r['family']}|n={r['n']}|m={r['m']}|gamma={r['gamma']!r}|{r['variant']}"
        aggregate[key] = max(aggregate.get(key, 0.0), r["bound_ratio"])
    return {"rows": rows, "aggregate_max_bound_ratio": aggregate,
            "failed": sum(1 for r in rows if not r["ok"])}


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    if isinstance(v, (list, tuple)):
        return "|".join(str(x) for x in v)
    if v is None:
        return ""
    return str(v)


def summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in summary["rows"]:
        w.writerow([_fmt(r[k]) for k in CSV_FIELDS])
    return buf.getvalue()


def summary_json(summary: dict) -> str:
    return json.dumps(summary, indent=1, sort_keys=True)
