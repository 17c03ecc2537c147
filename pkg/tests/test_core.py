import numpy as np
import pytest

from funoclust import core


class TestParallelWorkManager:
    @pytest.mark.parametrize("total", [1, 10, 2**63])
    @pytest.mark.parametrize("workers", [0, 1])
    def test_one_future_progress(self, total, workers):
        progress_config = core.ProgressConfig(total=total, show=True)
        with core.ParallelWorkManager(workers, progress_config) as pwm:
            pwm.submit(core.update_progress, total)
        assert core.get_progress() == total

    @pytest.mark.parametrize("total", [1, 10, 1000])
    @pytest.mark.parametrize("workers", [0, 1, 2, 3])
    def test_n_futures_progress(self, total, workers):
        progress_config = core.ProgressConfig(total=total, show=True)
        with core.ParallelWorkManager(workers, progress_config) as pwm:
            for _ in range(total):
                pwm.submit(core.update_progress, 1)
        assert core.get_progress() == total

    def test_hidden_progress_keeps_counter(self):
        core.set_progress(5)
        with core.ParallelWorkManager(0, core.ProgressConfig(total=3)) as pwm:
            for _ in range(3):
                pwm.submit(core.update_progress, 1)
        assert core.get_progress() == 8

    @pytest.mark.parametrize("total", [1, 10, 20])
    @pytest.mark.parametrize("workers", [0, 1, 2, 3])
    def test_submit_results(self, total, workers):
        with core.ParallelWorkManager(workers) as pwm:
            futures = [pwm.submit(frozenset, range(j)) for j in range(total)]
        results = set(future.result() for future in futures)
        assert results == set(frozenset(range(j)) for j in range(total))

    @pytest.mark.parametrize("workers", [0, 1, 2])
    def test_map_keeps_order(self, workers):
        with core.ParallelWorkManager(workers) as pwm:
            futures = pwm.map(np.arange, core.chunk_slices(23, 4))
        result = np.concatenate([future.result() for future in futures])
        np.testing.assert_array_equal(result, np.arange(23))

    @pytest.mark.parametrize("workers", [0, 2])
    def test_map_error_on_exit(self, workers):
        with pytest.raises(TypeError):
            with core.ParallelWorkManager(workers) as pwm:
                pwm.map(frozenset, [(range(2),), (3,), (range(4),)])

    def test_map_empty(self):
        with core.ParallelWorkManager(0) as pwm:
            assert pwm.map(frozenset, []) == []

    @pytest.mark.parametrize("total", [1, 10, 20])
    @pytest.mark.parametrize("workers", [1, 2, 3])
    def test_error_in_workers_on_result(self, total, workers):
        with pytest.raises(TypeError):  # noqa PT012
            with core.ParallelWorkManager(workers) as pwm:
                futures = pwm.map(frozenset, [(range(j),) for j in range(total)])
                # Raises a TypeError:
                futures.append(pwm.submit(frozenset, total))
                [future.result() for future in futures]

    @pytest.mark.parametrize("total", [1, 10, 20])
    @pytest.mark.parametrize("workers", [1, 2, 3])
    def test_error_in_workers_on_exit(self, total, workers):
        with pytest.raises(TypeError):  # noqa PT012
            with core.ParallelWorkManager(workers) as pwm:
                for j in range(total):
                    pwm.submit(frozenset, range(j))
                # Raises a TypeError:
                pwm.submit(frozenset, j)


class TestChunkSlices:
    @pytest.mark.parametrize(
        ("n", "num_slices", "expected"),
        [
            (1, 1, [(0, 1)]),
            (1, 4, [(0, 1)]),
            (10, 1, [(0, 10)]),
            (10, 2, [(0, 5), (5, 10)]),
            (10, 3, [(0, 4), (4, 7), (7, 10)]),
            (5, 5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]),
            (5, 100, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]),
        ],
    )
    def test_values(self, n, num_slices, expected):
        assert core.chunk_slices(n, num_slices) == expected

    def test_empty(self):
        assert core.chunk_slices(0, 3) == []

    @pytest.mark.parametrize(("n", "num_slices"), [(-1, 1), (10, 0), (10, -2)])
    def test_bad_args(self, n, num_slices):
        with pytest.raises(ValueError, match="must be >="):
            core.chunk_slices(n, num_slices)

    @pytest.mark.parametrize("n", [1, 7, 100])
    @pytest.mark.parametrize("num_slices", [1, 3, 8])
    def test_covers_range(self, n, num_slices):
        slices = core.chunk_slices(n, num_slices)
        assert slices[0][0] == 0
        assert slices[-1][1] == n
        for (_, stop), (start, _) in zip(slices[:-1], slices[1:]):
            assert stop == start


class TestDeriveSeed:
    def test_deterministic(self):
        assert core.derive_seed(42, 1, 2) == core.derive_seed(42, 1, 2)

    @pytest.mark.parametrize(
        ("a", "b"),
        [
            ((42, 1), (42, 2)),
            ((42, 1), (43, 1)),
            ((42, 1, 0), (42, 0, 1)),
            ((42,), (42, 0)),
        ],
    )
    def test_distinct(self, a, b):
        assert core.derive_seed(*a) != core.derive_seed(*b)

    def test_usable_as_seed(self):
        seed = core.derive_seed(1, 5)
        assert 0 <= seed < 2**32
        x = np.random.default_rng(seed).normal(size=3)
        y = np.random.default_rng(seed).normal(size=3)
        np.testing.assert_array_equal(x, y)
