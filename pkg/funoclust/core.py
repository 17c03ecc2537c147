import concurrent.futures as cf
import contextlib
import dataclasses
import logging
import multiprocessing
import threading

import numpy as np
import tqdm

logger = logging.getLogger(__name__)


def chunk_slices(n, num_slices):
    """
    Returns at most num_slices contiguous (start, stop) slices covering
    range(n), in order.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if num_slices < 1:
        raise ValueError("num_slices must be >= 1")
    if n == 0:
        return []
    splits = np.array_split(np.arange(n), min(n, num_slices))
    return [(int(split[0]), int(split[-1]) + 1) for split in splits]


def derive_seed(seed, *keys):
    """
    Returns a 32 bit seed derived deterministically from the root seed and
    the sequence of integer keys (iteration, start, replicate, ...).
    """
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


class SynchronousExecutor(cf.Executor):
    """
    Runs each task in the calling process as it is submitted.
    """

    def submit(self, fn, /, *args, **kwargs):
        future = cf.Future()
        try:
            future.set_result(fn(*args, **kwargs))
        except Exception as e:
            future.set_exception(e)
        return future


def wait_on_futures(futures):
    for future in cf.as_completed(futures):
        exception = future.exception()
        if exception is None:
            continue
        cancel_futures(futures)
        if isinstance(exception, cf.process.BrokenProcessPool):
            raise RuntimeError(
                "Worker process died: you may have run out of memory"
            ) from exception
        raise exception


def cancel_futures(futures):
    for future in futures:
        future.cancel()


@dataclasses.dataclass
class ProgressConfig:
    total: int = 0
    units: str = ""
    title: str = ""
    show: bool = False
    poll_interval: float = 0.01


# One counter per process tree, so only one visible bar at a time.
_progress_counter = multiprocessing.Value("Q", 0)


def update_progress(inc):
    with _progress_counter.get_lock():
        _progress_counter.value += inc


def get_progress():
    with _progress_counter.get_lock():
        return _progress_counter.value


def set_progress(value):
    with _progress_counter.get_lock():
        _progress_counter.value = value


class ParallelWorkManager(contextlib.AbstractContextManager):
    """
    Runs submitted tasks in a pool of worker_processes processes, or in the
    calling process when worker_processes <= 0, while a background thread
    copies the shared progress counter into a tqdm bar. Leaving the context
    waits for every task and re-raises the first failure.
    """

    def __init__(self, worker_processes=1, progress_config=None):
        if worker_processes <= 0:
            # Tests and refits nested inside a benchmark replicate
            self.executor = SynchronousExecutor()
        else:
            self.executor = cf.ProcessPoolExecutor(max_workers=worker_processes)
        self.futures = []
        self.progress_config = progress_config or ProgressConfig()
        # Managers nested inside a forked worker share its parent's counter,
        # so only a visible bar owns it.
        if self.progress_config.show:
            set_progress(0)
        self.progress_bar = tqdm.tqdm(
            total=self.progress_config.total,
            desc=f"{self.progress_config.title:>8}",
            unit_scale=True,
            unit=self.progress_config.units,
            smoothing=0.1,
            disable=not self.progress_config.show,
        )
        self._done = threading.Event()
        self._progress_thread = threading.Thread(
            target=self._progress_worker,
            name="progress-update",
            daemon=True,
        )
        self._progress_thread.start()

    def _refresh_progress(self):
        self.progress_bar.update(get_progress() - self.progress_bar.n)

    def _progress_worker(self):
        while not self._done.wait(self.progress_config.poll_interval):
            self._refresh_progress()
        logger.debug("Exit progress thread")

    def submit(self, fn, /, *args, **kwargs):
        future = self.executor.submit(fn, *args, **kwargs)
        self.futures.append(future)
        return future

    def map(self, fn, arg_tuples):
        """
        Submits fn(*args) for each tuple and returns the futures in the same
        order, so callers can reduce results independently of completion
        order.
        """
        return [self.submit(fn, *args) for args in arg_tuples]

    def __exit__(self, exc_type, exc_val, exc_tb):
        try:
            if exc_type is None:
                wait_on_futures(self.futures)
            else:
                cancel_futures(self.futures)
        finally:
            self._done.set()
            self.executor.shutdown(wait=False)
            self._progress_thread.join()
            self._refresh_progress()
            self.progress_bar.close()
        return False
