import numpy as np
import pytest

from funoclust import basis, evaluate, oclust, pipeline, simgen


class TestSmokeReplicate:
    # Reduced version of the full design run by validation.py
    @pytest.fixture(scope="class")
    def config(self):
        return pipeline.RunConfig(
            simulate=True,
            K=8,
            G=2,
            F=20,
            seed=42,
            worker_processes=0,
            n_trim=6,
            n_per_class=97,
            n_outliers=6,
        )

    @pytest.fixture(scope="class")
    def row(self, config):
        return pipeline.run_replicate(config, 0)

    def test_ari(self, row):
        assert row["ari"] >= 0.85

    def test_outliers_found(self, row):
        assert row["false_negative_rate"] <= 0.5
        assert 3 <= row["num_outliers"] <= 20

    def test_baseline_reported(self, row):
        assert -1 <= row["tkmeans_ari"] <= 1


class TestSimulatedPipeline:
    @pytest.fixture(scope="class")
    def data(self):
        config = simgen.SimConfig(n_per_class=60, n_outliers=4, num_points=50, seed=8)
        return simgen.generate(config)

    @pytest.fixture(scope="class")
    def result(self, data):
        grid = data.curves.grid
        knots = basis.make_knots(grid.lo, grid.hi, 4)
        return oclust.run_funoclust(
            data.curves, knots, 2, 10, seed=8, worker_processes=0
        )

    def test_first_removals_are_outliers(self, data, result):
        planted = set(np.flatnonzero(data.labels == simgen.OUTLIER))
        assert set(result.removal_sequence[:4]) == planted

    def test_outliers_flagged(self, data, result):
        rates = evaluate.outlier_rates(data.labels, result.final_labels)
        assert rates.false_negative_rate == 0

    def test_inlier_clusters(self, data, result):
        kept = (data.labels != simgen.OUTLIER) & (result.final_labels != 0)
        assert evaluate.ari(data.labels[kept], result.final_labels[kept]) >= 0.9
