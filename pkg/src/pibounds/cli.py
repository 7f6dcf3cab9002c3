"""Command-line experiment runner.

Exit codes: 0 pass, 1 check violation, 2 budget or iteration limit,
3 input error, 4 internal inconsistency.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import bounds, harness, structure
from .generators import GenSpec, InvalidSpec, ParseError, generate, load, save
from .mdp import InternalInconsistency, SingularSystem, ValidationError
from .solvers import VARIANTS, MaxIterExceeded, final_bellman_gap, run

EXIT_OK, EXIT_FAIL, EXIT_LIMIT, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3, 4


def _budget(args) -> int:
    return args.budget if args.budget is not None else structure.default_budget()


def _write(path, text):
    if path:
        Path(path).write_text(text)


def cmd_generate(args) -> int:
    if args.spec:
        text = Path(args.spec).read_text() if Path(args.spec).is_file() else args.spec
        spec = GenSpec.from_dict(json.loads(text))
    else:
        if args.family is None or args.n is None or args.m is None or args.gamma is None:
            raise InvalidSpec("--family, --n, --m and --gamma are required without --spec")
        spec = GenSpec(
            family=args.family, n=args.n, m=args.m, gamma=args.gamma, seed=args.seed,
            reward_range=(args.reward_lo, args.reward_hi),
            branching=args.branching, t=args.t, r=args.r,
        )
    mdp = generate(spec)
    save(mdp, args.out)
    print(spec.digest())
    return EXIT_OK


def cmd_solve(args) -> int:
    mdp = load(args.mdp)
    pi0 = json.loads(args.pi0) if args.pi0 else None
    try:
        trace = run(mdp, pi0, args.variant, args.tol, args.max_iter)
        code = EXIT_OK
    except MaxIterExceeded as exc:
        trace = exc.trace
        code = EXIT_LIMIT
        print(f"error: {exc}", file=sys.stderr)
    v_star, _ = bounds.optimal_oracle(mdp)
    _write(args.out, trace.to_json(v_star))
    events = sum(1 for r in trace.records if r.events and r.events.new_recurrent_class)
    print(f"variant: {trace.variant}")
    print(f"iterations: {trace.iterations}")
    print(f"final gap: {final_bellman_gap(mdp, trace):.3e}")
    print(f"new recurrent classes: {events}")
    print(f"final policy: {list(trace.final_policy)}")
    return code


def cmd_verify(args) -> int:
    mdp = load(args.mdp)
    variants = VARIANTS if args.variant == "both" else (args.variant,)
    budget = _budget(args)
    v_star, _ = bounds.optimal_oracle(mdp)
    report = structure.structural_constants(mdp, budget) if mdp.n_policies <= budget else None
    verdicts = [harness.verify(mdp, v, tol=args.tol, max_iter=args.max_iter, budget=budget,
                               v_star=v_star, report=report) for v in variants]
    for vd in verdicts:
        status = "PASS" if vd.ok else "FAIL"
        print(f"{vd.variant}: {status} iterations={vd.iterations} "
              f"tightest_bound={vd.tightest_bound:g}")
        for c in vd.lemma_checks:
            slack = "n/a" if c.to_dict()["worst_slack"] is None else f"{c.worst_slack:.3e}"
            print(f"  lemma {c.lemma}: checked={len(c.passes)} violations={c.violations} "
                  f"worst slack={slack}")
        for name, ok in sorted(vd.bound_results.items()):
            print(f"  bound {name}: {'pass' if ok else ('truncated' if ok is None else 'FAIL')}")
        if vd.failures:
            print(f"  violated: {', '.join(vd.failures)}")
    _write(args.out, json.dumps([vd.to_dict() for vd in verdicts], indent=1))
    return EXIT_OK if all(vd.ok for vd in verdicts) else EXIT_FAIL


def cmd_structure(args) -> int:
    mdp = load(args.mdp)
    budget = _budget(args)
    report = structure.structural_constants(mdp, budget)
    a1, violation = structure.check_assumption1(mdp, report, budget)
    print(f"tau_t: {report.tau_t!r}")
    print(f"tau_r: {report.tau_r!r}")
    print(f"policies enumerated: {report.policies_enumerated}")
    print(f"assumption1 self-check: {'true' if a1 else 'false'}")
    print(f"assumption2: {'true' if report.assumption2_holds else 'false'}")
    if report.partition is not None:
        T, R = report.partition
        print(f"partition: T={sorted(T)} R={sorted(R)}")
    out = report.to_dict()
    out["assumption1"] = a1
    _write(args.out, json.dumps(out, indent=1))
    return EXIT_OK if a1 else EXIT_INTERNAL


def cmd_sweep(args) -> int:
    cfg = harness.SweepConfig.from_dict(json.loads(Path(args.config).read_text()))
    out_dir = Path(args.out or cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summary = harness.run_sweep(cfg, args.jobs)
    (out_dir / "summary.json").write_text(harness.summary_json(summary))
    (out_dir / "summary.csv").write_text(harness.summary_csv(summary))
    print(f"rows: {len(summary['rows'])} failed: {summary['failed']}")
    return EXIT_FAIL if summary["failed"] else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pibounds", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a seeded MDP instance as JSON")
    g.add_argument("--spec", help="GenSpec JSON, inline or a file path")
    g.add_argument("--family", choices=("dense_random", "deterministic", "garnet",
                                        "two_block_assumption2"))
    g.add_argument("--n", type=int)
    g.add_argument("--m", type=int)
    g.add_argument("--gamma", type=float)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--branching", type=int)
    g.add_argument("--t", type=int)
    g.add_argument("--r", type=int)
    g.add_argument("--reward-lo", type=float, default=0.0)
    g.add_argument("--reward-hi", type=float, default=1.0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def solver_flags(sp, both=False):
        sp.add_argument("mdp", help="MDP JSON file")
        choices = VARIANTS + (("both",) if both else ())
        sp.add_argument("--variant", choices=choices, default="both" if both else "howard")
        sp.add_argument("--tol", type=float)
        sp.add_argument("--max-iter", type=int)
        sp.add_argument("--out")

    s = sub.add_parser("solve", help="run policy iteration and write the trace")
    solver_flags(s)
    s.add_argument("--pi0", help="initial policy as a JSON list")
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="check a run against the oracle, lemmas and bounds")
    solver_flags(v, both=True)
    v.add_argument("--budget", type=int)
    v.set_defaults(func=cmd_verify)

    st = sub.add_parser("structure", help="compute tau_t, tau_r and the assumption verdicts")
    st.add_argument("mdp")
    st.add_argument("--budget", type=int)
    st.add_argument("--out")
    st.set_defaults(func=cmd_structure)

    sw = sub.add_parser("sweep", help="verify a grid of generated instances")
    sw.add_argument("config", help="sweep config JSON file")
    sw.add_argument("--jobs", type=int)
    sw.add_argument("--out", help="output directory (overrides the config)")
    sw.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except structure.BudgetExceeded as exc:
        print(f"error: BudgetExceeded: m^n = {exc.n_policies} policies "
              f"(budget {exc.budget})", file=sys.stderr)
        return EXIT_LIMIT
    except (InvalidSpec, ParseError, ValidationError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InternalInconsistency, SingularSystem, bounds.OracleInconsistent) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
