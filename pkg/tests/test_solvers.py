import itertools
import json

import numpy as np
import pytest

from pibounds import generators as G
from pibounds.mdp import Mdp, policy_evaluation, switchable_set
from pibounds.solvers import (
    HOWARD,
    SIMPLEX,
    InverseCache,
    MaxIterExceeded,
    Step,
    Terminated,
    default_max_iter,
    final_bellman_gap,
    howard_step,
    run,
    simplex_step,
    simplex_step_sm,
)

from conftest import random_mdp


def enumerate_optimum(mdp):
    """Oracle: evaluate every policy and take the componentwise maximum."""
    values = [policy_evaluation(mdp, pi) for pi in itertools.product(range(mdp.m), repeat=mdp.n)]
    return np.max(values, axis=0)


class TestSteps:
    def test_howard_m2(self, m2):
        step = howard_step(m2, (0, 0))
        assert isinstance(step, Step)
        assert step.policy == (1, 0)
        assert step.switched == {0}
        assert step.max_advantage == pytest.approx(9.0)

    def test_howard_terminates_at_optimum(self, m2):
        assert isinstance(howard_step(m2, (1, 0)), Terminated)

    def test_single_action_terminates(self):
        mdp = G.generate(G.GenSpec("dense_random", 4, 1, 0.9, seed=3))
        assert isinstance(howard_step(mdp, (0,) * 4), Terminated)
        assert run(mdp, variant=HOWARD).iterations == 0

    def test_simplex_m2(self, m2):
        step = simplex_step(m2, (0, 0))
        assert step.switched == {0} and step.policy == (1, 0)

    def test_simplex_tie_lowest_index(self):
        # two identical states, both can switch to a better self-loop action
        P = np.zeros((2, 2, 2))
        P[0, :, 0] = 1.0
        P[1, :, 1] = 1.0
        mdp = Mdp(2, 2, 0.9, P, [[0.0, 1.0], [0.0, 1.0]])
        step = simplex_step(mdp, (0, 0))
        assert step.switched == {0}
        assert step.policy == (1, 0)

    def test_simplex_terminates_at_optimum(self, m2):
        assert isinstance(simplex_step(m2, (1, 0)), Terminated)

    @pytest.mark.parametrize("seed", range(10))
    def test_howard_switches_every_switchable_state(self, seed):
        rng = np.random.default_rng(seed)
        mdp = random_mdp(rng, 6, 3)
        pi = tuple(int(a) for a in rng.integers(0, 3, 6))
        step = howard_step(mdp, pi)
        if isinstance(step, Terminated):
            return
        assert step.switched == switchable_set(mdp, pi)
        assert {i for i in range(6) if step.policy[i] != pi[i]} == step.switched


class TestRun:
    def test_m2_howard(self, m2):
        trace = run(m2, (0, 0), HOWARD)
        assert trace.iterations == 1
        assert trace.final_policy == (1, 0)
        np.testing.assert_allclose(trace.final_value, [9, 10])

    @pytest.mark.parametrize("variant", [HOWARD, SIMPLEX])
    def test_m2_optimal_start(self, m2, variant):
        assert run(m2, (1, 0), variant).iterations == 0

    @pytest.mark.parametrize("variant", [HOWARD, SIMPLEX])
    @pytest.mark.parametrize("seed", range(15))
    def test_matches_enumeration(self, seed, variant):
        rng = np.random.default_rng(seed)
        n, m = int(rng.integers(1, 6)), int(rng.integers(1, 4))
        mdp = random_mdp(rng, n, m, sparse=bool(seed % 2))
        pi0 = tuple(int(a) for a in rng.integers(0, m, n))
        trace = run(mdp, pi0, variant)
        v_star = enumerate_optimum(mdp)
        np.testing.assert_allclose(trace.final_value, v_star, rtol=1e-9, atol=1e-9)
        assert final_bellman_gap(mdp, trace) <= 1e-9 * (1 + np.abs(v_star).max())

    @pytest.mark.parametrize("variant", [HOWARD, SIMPLEX])
    def test_trace_invariants(self, variant):
        rng = np.random.default_rng(1)
        mdp = random_mdp(rng, 8, 4)
        trace = run(mdp, (0,) * 8, variant)
        values = trace.values()
        for a, b in zip(values, values[1:]):
            assert np.all(b >= a - 1e-9)
        assert len(set(trace.policies)) == len(trace.policies)
        for rec in trace.records:
            assert rec.switched_states
            assert rec.switched_states <= rec.switchable_states
            if variant == SIMPLEX:
                assert len(rec.switched_states) == 1
            else:
                assert rec.switched_states == rec.switchable_states

    def test_max_iter_exceeded_carries_trace(self):
        mdp = G.generate(G.GenSpec("dense_random", 6, 3, 0.99, seed=4))
        full = run(mdp, (0,) * 6, SIMPLEX)
        assert full.iterations >= 2
        with pytest.raises(MaxIterExceeded) as info:
            run(mdp, (0,) * 6, SIMPLEX, max_iter=1)
        assert info.value.trace.iterations == 1
        assert not info.value.trace.terminated
        truncated = run(mdp, (0,) * 6, SIMPLEX, max_iter=2, raise_on_limit=False)
        assert truncated.iterations == 2 and not truncated.terminated

    def test_max_iter_counts_terminating_step(self, m2):
        assert run(m2, (0, 0), HOWARD, max_iter=2).iterations == 1
        with pytest.raises(MaxIterExceeded):
            run(m2, (0, 0), HOWARD, max_iter=1)

    def test_default_max_iter(self, m2):
        assert default_max_iter(m2, HOWARD) == 49
        assert default_max_iter(m2, SIMPLEX) == 121

    def test_large_n_skips_value_storage(self):
        mdp = G.generate(G.GenSpec("dense_random", 70, 2, 0.9, seed=0))
        trace = run(mdp, variant=HOWARD, track_structure=False)
        assert all(r.value_before is None for r in trace.records)
        with pytest.raises(ValueError):
            trace.values()

    def test_trace_json(self, m2):
        trace = run(m2, (0, 0), SIMPLEX)
        d = json.loads(trace.to_json(v_star=[9.0, 10.0]))
        assert d["variant"] == "simplex"
        assert d["iterations"] == 1
        assert d["switched"] == [[0]]
        assert d["final_policy"] == [1, 0]
        assert d["gaps_inf"] == pytest.approx([9.0, 0.0])
        assert d["gaps_l1"] == pytest.approx([9.0, 0.0])
        assert d["events"][0]["recurrent_class_broken"] is True


class TestShermanMorrison:
    def test_identical_row_leaves_inverse(self):
        mdp = G.generate(G.GenSpec("dense_random", 5, 2, 0.9, seed=0))
        P = mdp.transitions.copy()
        P[2, 1] = P[2, 0]
        mdp = Mdp(5, 2, 0.9, P, mdp.rewards)
        cache = InverseCache.build(mdp, (0,) * 5)
        new = cache.switched(mdp, 2, 1)
        np.testing.assert_array_equal(new.inverse, cache.inverse)

    def test_inverse_after_n_updates(self):
        rng = np.random.default_rng(7)
        n = 12
        mdp = G.generate(G.GenSpec("dense_random", n, 3, 0.95, seed=7))
        cache = InverseCache.build(mdp, (0,) * n)
        for _ in range(n):
            s = int(rng.integers(n))
            a = int((cache.policy[s] + 1 + rng.integers(2)) % 3)
            cache = cache.switched(mdp, s, a)
        fresh = InverseCache.build(mdp, cache.policy)
        np.testing.assert_allclose(cache.inverse, fresh.inverse, atol=1e-7)
        np.testing.assert_allclose(cache.value, policy_evaluation(mdp, cache.policy), atol=1e-8)

    def test_step_contract(self, m2):
        cache = InverseCache.build(m2, (0, 0))
        step, cache2 = simplex_step_sm(m2, cache)
        assert step.policy == (1, 0) and cache2.policy == (1, 0)
        np.testing.assert_allclose(cache2.value, [9, 10])
        done, same = simplex_step_sm(m2, cache2)
        assert isinstance(done, Terminated) and same is cache2

    @pytest.mark.parametrize("seed", range(5))
    def test_same_trajectory_as_fresh_solves(self, seed):
        mdp = G.generate(G.GenSpec("dense_random", 20, 3, 0.95, seed=seed))
        a = run(mdp, variant=SIMPLEX, track_structure=False)
        b = run(mdp, variant=SIMPLEX, track_structure=False, sherman_morrison=True)
        assert a.policies == b.policies
        for va, vb in zip(a.values(), b.values()):
            np.testing.assert_allclose(va, vb, atol=1e-8)

    def test_howard_rejects_sm(self, m2):
        with pytest.raises(ValueError):
            run(m2, variant=HOWARD, sherman_morrison=True)
