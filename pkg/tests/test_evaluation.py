import json
import math

import numpy as np
import pytest

from scqr.cqr import fit_cqr
from scqr.evaluation import (
    BenchResult,
    CvGrid,
    brute_force_subset,
    cross_validate,
    enumerate_supports,
    fdr,
    fold_indices,
    mae_quantile,
    n_supports,
    run_benchmark,
    selection_accuracy,
)
from scqr.synth import DgpSpec, gen_dgp
from scqr.types import CqrModel, Dataset, InstanceSizeError, ParameterError, QuantileConfig, standardize

SMALL_T2 = {"n": 30, "n_test": 20, "replicates": 1, "C_values": [0.5, 2.0], "eps_values": [0.0, 0.2], "folds": 3}


class TestMetrics:
    def test_accuracy_example(self):
        assert selection_accuracy({1, 2, 3, 4, 5}, {1, 2, 3, 7, 8}, 5) == pytest.approx(0.6)

    def test_accuracy_k_zero(self):
        with pytest.raises(ParameterError):
            selection_accuracy({1}, {1}, 0)

    def test_fdr_examples(self):
        assert fdr({1, 2}, {1, 3, 4, 5}) == pytest.approx(0.75)
        assert fdr({1, 2}, set()) == 0.0

    def test_mae_of_constant_model(self):
        m = CqrModel(theta=[1.0], beta=[[0.0]], xi=[0], xi_star=[0], anchors=[[0.0]], objective=0.0)
        data = Dataset([[0.0], [1.0]], [3.0, 0.0])
        # residuals 2 and -1 at tau 0.25: 0.5 and 0.75
        assert mae_quantile(m, data, 0.25) == pytest.approx(0.625)


class TestFolds:
    def test_partition(self):
        parts = fold_indices(23, 5, 0)
        assert sorted(np.concatenate(parts).tolist()) == list(range(23))
        assert {p.size for p in parts} <= {4, 5}

    def test_seeded(self):
        a, b = fold_indices(20, 4, 3), fold_indices(20, 4, 3)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_too_small(self):
        with pytest.raises(ParameterError):
            fold_indices(9, 5, 0)

    @pytest.mark.parametrize("kw", [dict(C_values=()), dict(C_values=(0.0,)), dict(eps_values=(-1.0,)),
                                    dict(k_values=(0,)), dict(folds=1), dict(tau=1.0)])
    def test_grid_validation(self, kw):
        with pytest.raises(ParameterError):
            CvGrid(**kw)

    def test_grid_order(self):
        g = CvGrid(C_values=(2.0, 1.0), eps_values=(0.1, 0.0), k_values=(3, 2))
        assert g.points(True)[:3] == [(1.0, 0.0, 2), (1.0, 0.0, 3), (1.0, 0.1, 2)]
        assert g.points(False)[0] == (1.0, 0.0, None)


@pytest.fixture(scope="module")
def data():
    data, _ = gen_dgp(DgpSpec("DgpI", n=40, sigma=1.0, seed=2))
    return data


class TestCrossValidate:
    def test_best_is_table_minimum(self, data):
        grid = CvGrid((0.5, 2.0), (0.0, 0.2), folds=4, tau=0.5)
        best, table = cross_validate(data, grid, "CqrOnly", seed=1)
        assert len(table) == 4
        assert best["mean_loss"] == min(r["mean_loss"] for r in table)

    def test_seeding_matches_cold_fits(self, data):
        grid = CvGrid((0.5, 2.0), (0.0,), folds=4, tau=0.5)
        _, table = cross_validate(data, grid, "CqrOnly", seed=1)
        parts = fold_indices(data.n, 4, 1)
        va = parts[2]
        tr = np.setdiff1d(np.arange(data.n), va)
        model, _ = fit_cqr(data.subset(tr), QuantileConfig(tau=0.5, C=2.0))
        assert table[1]["fold_losses"][2] == pytest.approx(mae_quantile(model, data.subset(va), 0.5), abs=1e-5)

    def test_ties_to_smaller_values(self):
        data = Dataset(np.arange(10.0)[:, None], np.full(10, 3.0))
        best, _ = cross_validate(data, CvGrid((1.0, 5.0), (0.0, 0.5), folds=2), "CqrOnly")
        assert (best["C"], best["epsilon"]) == (1.0, 0.0)

    def test_scqr_pipeline(self):
        data, _ = gen_dgp(DgpSpec("QuadraticGaussian", n=30, d=4, k=2, snr=5.0, seed=0))
        data = standardize(data)
        opts = {"gbd_iters": 5, "lsb_iters": 0}
        for reselect in (False, True):
            best, table = cross_validate(data, CvGrid((1.0,), (0.0,), (1, 2), folds=3), "ScqrGbd",
                                         select_options=opts, reselect=reselect)
            assert best["k"] in (1, 2) and len(table) == 2
            assert ("support" in table[0]) is (not reselect)

    def test_unknown_pipeline(self, data):
        with pytest.raises(ParameterError):
            cross_validate(data, CvGrid(), "Lasso")


class TestBruteForce:
    def test_enumeration_order(self):
        bits = [z.bits() for z in enumerate_supports(3, 2)]
        assert bits == ["000", "100", "010", "001", "110", "101", "011"]
        assert n_supports(3, 2) == 7 and n_supports(8, 3) == 93

    def test_cap(self):
        data = Dataset(np.zeros((3, 30)), [0.0, 1.0, 2.0])
        with pytest.raises(InstanceSizeError):
            brute_force_subset(data, QuantileConfig(), 5)

    def test_first_minimizer(self):
        data = Dataset(np.zeros((4, 3)), [0.0, 1.0, 2.0, 3.0])
        z, g, table = brute_force_subset(data, QuantileConfig(), 2)
        # constant columns: every support has the same value, the empty one comes first
        assert z.bits() == "000"
        assert len(table) == 7 and max(table.values()) - min(table.values()) < 1e-6


class TestBenchResult:
    def test_rejects_bad_accuracy(self):
        with pytest.raises(ParameterError):
            BenchResult("Table4", {}, [{"accuracy": 1.5}])

    def test_aggregate_by_tau(self):
        r = BenchResult("Table3", {}, [{"tau": 0.25, "x": 1.0}, {"tau": 0.75, "x": 3.0}])
        agg = r.aggregate()
        assert agg["mean_x"] == 2.0 and agg["by_tau"]["0.25"]["mean_x"] == 1.0

    def test_timing_stripped(self):
        r = BenchResult("Table4", {}, [{"seed": 0, "accuracy": 1.0, "run_time": 3.2, "time_to_incumbent": 1.0}])
        assert "run_time" not in r.to_csv(timing=False)
        body = json.loads(r.to_json(timing=False))
        assert "run_time" not in body["records"][0] and body["schema_version"] == 1

    def test_unknown_suite_and_key(self):
        with pytest.raises(ParameterError):
            run_benchmark("Table9")
        with pytest.raises(ParameterError):
            run_benchmark("Table2", {"bogus": 1})


class TestBenchmarks:
    def test_table2_small_deterministic(self):
        a = run_benchmark("Table2", SMALL_T2)
        b = run_benchmark("Table2", SMALL_T2)
        assert a.to_csv(timing=False) == b.to_csv(timing=False)
        assert a.to_json(timing=False) == b.to_json(timing=False)
        rec = a.records[0]
        assert rec["mae_in"] >= 0 and rec["mae_out"] >= 0
        assert rec["C"] in SMALL_T2["C_values"] and rec["epsilon"] in SMALL_T2["eps_values"]

    def test_table3_small(self):
        r = run_benchmark("Table3", {"n": 40, "d": 3})
        assert [x["tau"] for x in r.records] == [0.25, 0.5, 0.75]
        assert all(x["primal_infeasibility"] <= 0.01 for x in r.records)

    def test_table4_small(self):
        r = run_benchmark("Table4", {"n": 40, "d": 6, "k": 2, "replicates": 1, "gbd_iters": 3})
        rec = r.records[0]
        assert 0.0 <= rec["accuracy"] <= 1.0 and len(rec["selected"]) <= 2
        assert math.isfinite(rec["g"])
