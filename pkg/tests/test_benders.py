import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scqr.benders import (
    BendersCut,
    CutMatrix,
    DualSolution,
    MasterStats,
    SubproblemOracle,
    _ball_size,
    _hamming_ball,
    _one_dim_quantile_value,
    dual_objective,
    eval_subproblem,
    feature_scores,
    run_gbd,
    solve_master,
    solve_relaxation,
    top_k_support,
    warm_start,
)
from scqr.cqr import fit_cqr
from scqr.evaluation import brute_force_subset
from scqr.synth import DgpSpec, gen_dgp
from scqr.types import ParameterError, QuantileConfig, SupportVector, standardize

D, K = 6, 2
CFG = QuantileConfig(tau=0.5, C=1.0)


@pytest.fixture(scope="module")
def inst():
    data, _ = gen_dgp(DgpSpec("QuadraticGaussian", n=30, d=D, k=K, snr=3.0, seed=0))
    data = standardize(data)
    oracle = SubproblemOracle(data, CFG, keep_models=True)
    z, g, table = brute_force_subset(data, CFG, K, oracle=oracle)
    return data, oracle, z, g, table


def all_supports(d, k):
    for bits in itertools.product((0, 1), repeat=d):
        if sum(bits) <= k:
            yield np.array(bits, dtype=np.int8)


def rand_cuts(seed, d, m):
    r = np.random.default_rng(seed)
    out = []
    for _ in range(m):
        z = SupportVector(r.integers(0, 2, d), d)
        out.append(BendersCut(z, float(r.uniform(0, 10)), -r.exponential(2.0, d)))
    return out


class TestSubproblem:
    def test_empty_support_is_one_dim_quantile(self, inst):
        data, oracle, *_ = inst
        g0 = oracle(SupportVector.from_indices([], D)).g_value
        assert g0 == pytest.approx(_one_dim_quantile_value(data.y, CFG.tau, CFG.C), rel=1e-6, abs=1e-6)

    def test_one_dim_oracle_example(self):
        # median of {0, 1, 5} is 1: |0-1| + |5-1| halved
        assert _one_dim_quantile_value(np.array([0.0, 1.0, 5.0]), 0.5, 2.0) == pytest.approx(5.0)

    def test_full_support_equals_plain_fit(self, inst):
        data, oracle, *_ = inst
        model, _ = fit_cqr(data, CFG)
        assert oracle(SupportVector.from_indices(range(D), D)).g_value == pytest.approx(model.objective, rel=1e-6, abs=1e-7)

    def test_strong_duality(self, inst):
        data, oracle, _, _, table = inst
        for bits in list(table)[::3]:
            z = SupportVector.from_bits(bits)
            ev = oracle(z)
            dv = dual_objective(data, CFG, ev.dual, z)
            assert dv == pytest.approx(ev.g_value, abs=1e-4 * (1 + abs(ev.g_value)))
            assert ev.dual.box_violation(CFG.tau, CFG.C) <= 1e-9
            assert np.max(np.abs(ev.dual.flow_residual())) <= 1e-5 * CFG.C

    def test_strong_duality_with_epsilon(self, inst):
        data = inst[0]
        cfg = QuantileConfig(tau=0.25, C=2.0, epsilon=0.2)
        z = SupportVector.from_indices([0, 3], D)
        g, _, dual = eval_subproblem(data, cfg, z)
        assert dual_objective(data, cfg, dual, z) == pytest.approx(g, abs=1e-4 * (1 + abs(g)))

    def test_cuts_underestimate_everywhere(self, inst):
        _, oracle, _, _, table = inst
        Z = np.array([[int(c) for c in b] for b in table])
        gz = np.array(list(table.values()))
        for ev in oracle.evaluations():
            assert np.all(ev.cut.value_at(Z) <= gz + 1e-4 * (1 + np.abs(gz)))
            assert ev.cut.value_at(ev.z) == pytest.approx(ev.g_value)

    def test_g_monotone_in_support(self, inst):
        _, _, _, _, table = inst
        for bits, g in table.items():
            for p, c in enumerate(bits):
                if c == "1":
                    sub = bits[:p] + "0" + bits[p + 1:]
                    assert table[sub] >= g - 1e-5 * (1 + abs(g))

    def test_seeding_does_not_change_g(self, inst):
        data, oracle, *_ = inst
        z = SupportVector.from_indices([1, 4], D)
        cold, _, _ = eval_subproblem(data, CFG, z)
        assert oracle(z).g_value == pytest.approx(cold, abs=1e-5 * (1 + abs(cold)))

    def test_oracle_memoizes(self, inst):
        _, oracle, *_ = inst
        n = oracle.n_solves
        oracle(SupportVector.from_indices([0], D))
        assert oracle.n_solves == n

    def test_unregularized_rejected(self, inst):
        with pytest.raises(ParameterError):
            SubproblemOracle(inst[0], QuantileConfig(regularized=False))


class TestCut:
    def test_positive_subgradient_rejected(self):
        with pytest.raises(ParameterError):
            BendersCut(SupportVector.from_indices([], 2), 1.0, [0.0, 0.5])

    def test_intercept(self):
        c = BendersCut(SupportVector.from_indices([0], 2), 3.0, [-1.0, -2.0])
        assert c.intercept == 4.0
        assert c.value_at(SupportVector.from_indices([1], 2)) == pytest.approx(2.0)

    def test_duplicate_cut_ignored(self):
        c = BendersCut(SupportVector.from_indices([], 2), 1.0, [0.0, 0.0])
        cm = CutMatrix(2, [c])
        assert not cm.add(c) and len(cm) == 1

    def test_feature_scores_from_pairs(self):
        X = np.array([[0.0, 0.0], [1.0, 2.0]])
        dual = DualSolution(np.zeros(2), np.zeros(2), {(0, 1): 0.5})
        np.testing.assert_allclose(feature_scores(type("D", (), {"X": X})(), dual), [0.25, 1.0])


class TestMaster:
    def test_two_cut_example(self):
        cuts = [BendersCut(SupportVector.from_indices([], 3), 5.0, [-4.0, -1.0, -1.0]),
                BendersCut(SupportVector.from_indices([0], 3), 2.0, [-0.5, -3.0, -0.1])]
        z, v = solve_master(cuts, 3, 1)
        # candidates: 0 -> 5, e0 -> 2, e1 -> 4, e2 -> 4.1
        assert z.indices == (0,) and v == pytest.approx(2.0)

    @given(st.integers(0, 10**6), st.integers(2, 8), st.integers(1, 12), st.integers(0, 8))
    def test_matches_enumeration(self, seed, d, m, k):
        k = min(k, d)
        cm = CutMatrix(d, rand_cuts(seed, d, m))
        Z = np.array(list(all_supports(d, k)))
        vals = cm.values(Z)
        z, v = solve_master(cm, d, k)
        assert z.z.sum() <= k
        assert v == pytest.approx(vals.min(), abs=1e-6 * (1 + abs(vals.min())))
        assert cm.values(z.z[None, :])[0] == pytest.approx(v, abs=1e-6 * (1 + abs(v)))

    @given(st.integers(0, 10**6), st.integers(0, 3))
    def test_restricted_matches_enumeration(self, seed, r):
        d, k = 7, 3
        cm = CutMatrix(d, rand_cuts(seed, d, 6))
        center = SupportVector.from_indices([1, 5], d, k)
        Z = np.array([z for z in all_supports(d, k) if np.sum(z != center.z) <= r])
        z, v = solve_master(cm, d, k, restriction=(center, r))
        assert np.sum(z.z != center.z) <= r
        assert v == pytest.approx(cm.values(Z).min(), abs=1e-9)

    def test_radius_zero_returns_center(self):
        cm = CutMatrix(4, rand_cuts(0, 4, 3))
        center = SupportVector.from_indices([2], 4)
        z, _ = solve_master(cm, 4, 2, restriction=(center, 0))
        assert z.indices == center.indices

    def test_branch_and_bound_on_large_ball(self):
        d, k = 40, 6
        cm = CutMatrix(d, rand_cuts(3, d, 10))
        center = SupportVector.from_indices(range(6), d)
        stats = MasterStats()
        z, v = solve_master(cm, d, k, restriction=(center, 5), stats=stats)
        assert stats.method == "branch-and-bound"
        assert _ball_size(center.z.astype(np.int8), 5, k) > 20000
        Z = _hamming_ball(center.z.astype(np.int8), 5, k)
        assert v == pytest.approx(cm.values(Z).min(), abs=1e-6 * (1 + abs(v)))

    def test_errors(self):
        with pytest.raises(ParameterError):
            solve_master([], 3, 1)
        cm = CutMatrix(3, rand_cuts(0, 3, 1))
        with pytest.raises(ParameterError):
            solve_master(cm, 3, 1, restriction=(SupportVector.from_indices(range(3), 3), 1))


class TestHammingBall:
    @given(st.integers(0, 10**6), st.integers(1, 9), st.integers(0, 4), st.integers(0, 9))
    def test_ball_contents(self, seed, d, r, k):
        k = min(k, d)
        rng = np.random.default_rng(seed)
        c = np.zeros(d, dtype=np.int8)
        c[rng.permutation(d)[: rng.integers(0, k + 1)]] = 1
        Z = _hamming_ball(c, r, k)
        expected = {z.tobytes() for z in all_supports(d, k) if np.sum(z != c) <= r}
        assert {z.astype(np.int8).tobytes() for z in Z} == expected
        assert Z.shape[0] == len(expected) == _ball_size(c, r, k)


class TestWarmStart:
    def test_top_k_ties_to_smaller_index(self):
        assert top_k_support(np.array([1.0, 3.0, 3.0, 0.0]), 1).indices == (1,)

    def test_constant_column_not_chosen(self, inst):
        data = inst[0]
        X = data.X.copy()
        X[:, 2] = 0.0
        d2 = type(data)(X, data.y)
        z = warm_start(d2, CFG, K, "OneShot")
        assert 2 not in z.indices

    def test_one_shot_scores_match_recomputation(self, inst):
        data, oracle, *_ = inst
        ev = oracle(SupportVector.from_indices(range(D), D))
        I, J, V = ev.dual.mu_arrays()
        q = np.zeros(D)
        for i in range(data.n):
            w = sum((V[t] * (data.X[J[t]] - data.X[i]) for t in np.flatnonzero(I == i)), np.zeros(D))
            q += w ** 2
        np.testing.assert_allclose(feature_scores(data, ev.dual), q, rtol=1e-9, atol=1e-12)
        assert warm_start(data, CFG, K, oracle=oracle) == top_k_support(q, K)

    def test_relaxation_lower_bound(self, inst):
        data, oracle, _, g_min, _ = inst
        res = solve_relaxation(data, CFG, K, steps=60, oracle=oracle)
        assert res.lower_bound <= g_min + 1e-6
        assert res.z.z.sum() <= K

    def test_k_zero_rejected(self, inst):
        with pytest.raises(ParameterError):
            warm_start(inst[0], CFG, 0)


class TestGbd:
    @pytest.mark.parametrize("warm", ["OneShot", "Relaxation"])
    def test_reaches_brute_force_optimum(self, inst, warm):
        data, oracle, z_bf, g_bf, _ = inst
        state, model = run_gbd(data, CFG, K, T=200, warm=warm, oracle=oracle)
        assert state.converged
        assert state.incumbent_g == pytest.approx(g_bf, abs=1e-4 * (1 + g_bf))
        assert model.objective == pytest.approx(state.incumbent_g, abs=1e-4 * (1 + g_bf))

    def test_bound_traces(self, inst):
        data, oracle, _, g_bf, _ = inst
        state, _ = run_gbd(data, CFG, K, T=200, oracle=oracle, refit=False)
        lb, ub = state.bound_traces()
        assert np.all(np.diff(ub) <= 0) and np.all(np.diff(lb) >= -1e-12)
        assert np.all(lb <= g_bf + 1e-4 * (1 + g_bf))
        assert np.all(np.diff(state.incumbent_trace()) <= 0)

    def test_no_repeated_proposals(self):
        data, _ = gen_dgp(DgpSpec("QuadraticGaussian", n=30, d=D, k=K, snr=1.0, seed=3))
        data = standardize(data)
        state, _ = run_gbd(data, CFG, K, T=200, z0=SupportVector.from_indices([4, 5], D), refit=False)
        seen = [h["z"] for h in state.history]
        assert len(seen) == len(set(seen))

    def test_k_at_least_d_is_full_fit(self, inst):
        data, oracle, *_ = inst
        state, _ = run_gbd(data, CFG, D + 3, oracle=oracle, refit=False)
        assert state.converged
        assert state.incumbent_g == pytest.approx(oracle(SupportVector.from_indices(range(D), D)).g_value, rel=1e-6)

    def test_iteration_cap(self, inst):
        data, oracle, *_ = inst
        state, _ = run_gbd(data, CFG, K, T=1, z0=SupportVector.from_indices([4, 5], D), oracle=oracle, refit=False)
        assert state.t <= 2

    def test_history_serializes(self, inst):
        data, oracle, *_ = inst
        state, _ = run_gbd(data, CFG, K, oracle=oracle, refit=False)
        lines = state.to_jsonl().splitlines()
        assert len(lines) == state.t
        assert state.summary()["iterations"] == state.t
        assert math.isfinite(state.summary()["UB"])
