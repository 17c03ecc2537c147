"""
End-to-end entry points: reading curve files, running the trimming
pipeline, the simulation benchmark, and writing result artifacts.
"""
import csv
import dataclasses
import datetime
import io
import json
import logging
import math
import os
import pathlib
import time
from typing import Dict, Tuple, Union

import humanfriendly
import numpy as np

from . import basis, core, evaluate, oclust, provenance, simgen
logger = logging.getLogger(__name__)

PathType = Union[str, pathlib.Path]

FORMAT_VERSION = "0.1"
SUMMARY_FILE = "summary.json"
LABELS_FILE = "labels.csv"
KL_TRACE_FILE = "kl_trace.csv"
COEFFICIENTS_FILE = "coefficients.csv"
FITTED_CURVES_FILE = "fitted_curves.csv"
D_VALUES_FILE = "d_values.csv"
BENCHMARK_FILE = "benchmark.csv"
CURVES_FILE = "curves.csv"
TRUTH_FILE = "truth.csv"
OUTLIER_LABEL = "OUTLIER"


class CurveParseError(ValueError):
    def __init__(self, message, row=None):
        if row is not None:
            message = f"Row {row}: {message}"
        super().__init__(message)
        self.row = row


@dataclasses.dataclass
class RunConfig:
    input_path: str = None
    simulate: bool = False
    K: int = 8
    G: int = 2
    F: int = 50
    bins: int = 10
    seed: int = 42
    impute_missing: bool = False
    out_dir: str = None
    worker_processes: int = 1
    replicates: int = 10
    n_trim: int = 25
    baseline: bool = False
    # Simulation design
    n_per_class: int = 250
    n_outliers: int = 15
    num_points: int = 100
    format_version: str = FORMAT_VERSION

    def __post_init__(self):
        if self.input_path is not None:
            self.input_path = str(self.input_path)
        if self.out_dir is not None:
            self.out_dir = str(self.out_dir)
        if self.K < 0:
            raise ValueError(f"Number of interior knots must be >= 0, got {self.K}")
        if self.G < 1:
            raise ValueError(f"Number of clusters must be >= 1, got {self.G}")
        if self.F < 0:
            raise ValueError(f"Maximum outliers must be >= 0, got {self.F}")
        if self.bins < 2:
            raise ValueError(f"Need at least 2 KL bins, got {self.bins}")
        if self.replicates < 1:
            raise ValueError(f"Need at least one replicate, got {self.replicates}")
        if self.n_trim < 0:
            raise ValueError(f"Baseline trim must be >= 0, got {self.n_trim}")
        if self.simulate:
            sim_config = self.sim_config(self.seed)
            oclust.check_max_outliers(sim_config.num_curves, self.K, self.G, self.F)

    def sim_config(self, seed):
        return simgen.SimConfig(
            n_per_class=self.n_per_class,
            n_outliers=self.n_outliers,
            num_points=self.num_points,
            seed=seed,
        )

    def asdict(self):
        return dataclasses.asdict(self)

    @staticmethod
    def fromdict(d):
        if d["format_version"] != FORMAT_VERSION:
            raise ValueError(
                "Run configuration format version mismatch: "
                f"{d['format_version']} != {FORMAT_VERSION}"
            )
        return RunConfig(**d)


def fmt(x):
    return f"{x:.12g}"


def _parse_cell(cell, row, column):
    cell = cell.strip()
    if cell == "":
        return math.nan
    try:
        value = float(cell)
    except ValueError:
        raise CurveParseError(
            f"non-numeric value {cell!r} in column {column}", row
        ) from None
    if not math.isfinite(value):
        raise CurveParseError(f"non-finite value {cell!r} in column {column}", row)
    return value


def ingest(
    path: PathType, impute_missing: bool = False
) -> Tuple[basis.CurveSet, basis.TimeGrid]:
    """
    Reads a curve file: the first row holds the time points and every
    following row one curve. Empty cells are missing; when impute_missing
    is set they are replaced by the mean of their column.
    """
    path = pathlib.Path(path)
    with open(path, newline="") as f:
        rows = [(j + 1, row) for j, row in enumerate(csv.reader(f)) if len(row) > 0]
    if len(rows) == 0:
        raise CurveParseError(f"{path} is empty")
    header_row, header = rows[0]
    points = [_parse_cell(cell, header_row, k + 1) for k, cell in enumerate(header)]
    if any(math.isnan(x) for x in points):
        raise CurveParseError("time grid has empty cells", header_row)
    try:
        grid = basis.TimeGrid(points)
    except ValueError as e:
        raise CurveParseError(str(e), header_row) from None
    if len(rows) == 1:
        raise CurveParseError(f"{path} contains no curves")
    values = np.empty((len(rows) - 1, len(grid)))
    for i, (row_num, row) in enumerate(rows[1:]):
        if len(row) != len(grid):
            raise CurveParseError(
                f"expected {len(grid)} values, found {len(row)}", row_num
            )
        values[i] = [_parse_cell(cell, row_num, k + 1) for k, cell in enumerate(row)]

    missing = np.isnan(values)
    all_missing = np.flatnonzero(np.all(missing, axis=0))
    if all_missing.shape[0] > 0:
        raise CurveParseError(
            f"column {all_missing[0] + 1} (t={fmt(grid.points[all_missing[0]])}) "
            "has no observed values"
        )
    if np.any(missing):
        if not impute_missing:
            first = int(np.flatnonzero(np.any(missing, axis=1))[0])
            raise CurveParseError(
                "missing values present; use imputation to fill them",
                rows[first + 1][0],
            )
        column_means = np.nanmean(values, axis=0)
        values = np.where(missing, column_means, values)
        logger.info(f"Imputed {int(missing.sum())} missing values with column means")
    curves = basis.CurveSet(grid, values)
    logger.info(f"Read {curves.num_curves} curves on {len(grid)} time points")
    return curves, grid


def _csv_text(header, rows):
    buff = io.StringIO()
    writer = csv.writer(buff, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    writer.writerows(rows)
    return buff.getvalue()


def write_atomic(path: PathType, text: str) -> None:
    path = pathlib.Path(path)
    tmp_path = path.with_name(f"{path.name}.{os.getpid()}.tmp")
    try:
        with open(tmp_path, "w") as f:
            f.write(text)
        # Atomic swap
        os.replace(tmp_path, path)
    except BaseException:
        tmp_path.unlink(missing_ok=True)
        raise
    logger.debug(f"Wrote {path}")


def write_curves(path, curves):
    rows = [[fmt(x) for x in row] for row in curves.values]
    write_atomic(path, _csv_text([fmt(t) for t in curves.grid.points], rows))


def write_labels(path, labels):
    rows = [
        [j, OUTLIER_LABEL if label == evaluate.OUTLIER else int(label)]
        for j, label in enumerate(labels)
    ]
    write_atomic(path, _csv_text(["curve", "label"], rows))


def read_labels(path: PathType) -> np.ndarray:
    """
    Reads a labels file back into a partition with OUTLIER as 0.
    """
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        labels = [
            evaluate.OUTLIER if label == OUTLIER_LABEL else int(label)
            for _, label in reader
        ]
    return np.array(labels)


def write_coefficients(path, coefs):
    header = ["curve"] + [f"b{k}" for k in range(coefs.dim)]
    rows = [[j] + [fmt(x) for x in row] for j, row in enumerate(coefs.coefs)]
    write_atomic(path, _csv_text(header, rows))


def read_coefficients(path: PathType) -> basis.CoefficientSet:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return basis.CoefficientSet(data[:, 1:])


def write_kl_trace(path, result):
    rows = []
    for iteration, kl in enumerate(result.kl_trace):
        removed = ""
        if iteration < len(result.removal_sequence):
            removed = result.removal_sequence[iteration]
        rows.append([iteration, fmt(kl), removed])
    write_atomic(path, _csv_text(["iteration", "kl", "removed"], rows))


def write_d_values(path, result):
    rows = []
    for iteration, (retained, sample) in enumerate(
        zip(result.retained, result.d_samples)
    ):
        for curve, d in zip(retained, sample.values):
            rows.append([iteration, int(curve), fmt(d)])
    write_atomic(path, _csv_text(["iteration", "curve", "d"], rows))


def _none_or_float(x):
    return None if x is None else float(x)


def evaluation_summary(truth, pred):
    rates = evaluate.outlier_rates(truth, pred)
    return {
        "ari": evaluate.ari(truth, pred),
        "ari_inliers": evaluate.ari_on_inliers(truth, pred),
        "false_positive_rate": _none_or_float(rates.false_positive_rate),
        "false_negative_rate": _none_or_float(rates.false_negative_rate),
    }


@dataclasses.dataclass
class RunResult:
    summary: dict
    result: oclust.OclustResult
    truth: np.ndarray = None
    baseline: evaluate.TrimmedKMeansResult = None

    @property
    def confusion(self):
        if self.truth is None:
            return None
        return evaluate.confusion_matrix(self.truth, self.result.final_labels)


@dataclasses.dataclass
class RunInput:
    curves: basis.CurveSet
    # Simulated truth; None for curves read from a file
    truth: np.ndarray = None


def load_input(config):
    """
    Reads or simulates the curves for config, checking that F leaves enough
    curves to fit the G clusters.
    """
    if (config.input_path is None) == (not config.simulate):
        raise ValueError("Specify exactly one of an input file or simulate mode")
    if config.simulate:
        data = simgen.generate(config.sim_config(core.derive_seed(config.seed, 0)))
        run_input = RunInput(data.curves, data.labels)
    else:
        curves, _ = ingest(config.input_path, config.impute_missing)
        run_input = RunInput(curves)
    oclust.check_max_outliers(
        run_input.curves.num_curves, config.K, config.G, config.F
    )
    return run_input


def run(config, run_input=None, *, show_progress=False):
    """
    Runs the pipeline described by config and writes its artifacts to
    config.out_dir. The curves are loaded from config unless run_input
    already holds them.
    """
    if config.out_dir is None:
        raise ValueError("An output directory is required")
    start_time = time.time()
    if run_input is None:
        run_input = load_input(config)
    curves = run_input.curves
    truth = run_input.truth
    knots = basis.make_knots(curves.grid.lo, curves.grid.hi, config.K)
    result = oclust.run_funoclust(
        curves,
        knots,
        config.G,
        config.F,
        seed=core.derive_seed(config.seed, 1),
        bins=config.bins,
        worker_processes=config.worker_processes,
        show_progress=show_progress,
    )
    out_dir = pathlib.Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_labels(out_dir / LABELS_FILE, result.final_labels)
    write_kl_trace(out_dir / KL_TRACE_FILE, result)
    write_coefficients(out_dir / COEFFICIENTS_FILE, result.coefs)
    fitted = basis.reconstruct(result.basis_matrix, result.coefs)
    write_curves(out_dir / FITTED_CURVES_FILE, fitted)
    write_d_values(out_dir / D_VALUES_FILE, result)

    summary = {
        "format_version": FORMAT_VERSION,
        "provenance": provenance.source(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": config.seed,
        "config": config.asdict(),
        "num_curves": int(curves.num_curves),
        "knots": {
            "interior": [float(x) for x in knots.interior],
            "boundary_lo": knots.boundary_lo,
            "boundary_hi": knots.boundary_hi,
        },
        "best_iteration": result.best_iteration,
        "num_outliers": result.num_outliers,
        "outliers": [int(j) for j in result.outliers],
        "final_loglik": float(result.final_loglik),
        "cluster_sizes": [int(x) for x in result.cluster_sizes],
    }
    run_result = RunResult(summary=summary, result=result, truth=truth)
    if truth is not None:
        summary["evaluation"] = evaluation_summary(truth, result.final_labels)
        confusion = run_result.confusion
        summary["confusion"] = {
            "truth": [int(x) for x in confusion.row_labels],
            "predicted": [int(x) for x in confusion.col_labels],
            "counts": confusion.counts.tolist(),
        }
    if config.baseline:
        n_trim = result.num_outliers
        baseline = evaluate.trimmed_kmeans(
            result.coefs, config.G, n_trim, seed=core.derive_seed(config.seed, 2)
        )
        run_result.baseline = baseline
        entry = {"n_trim": n_trim, "objective": baseline.objective}
        if truth is not None:
            entry.update(evaluation_summary(truth, baseline.labels))
        summary["tkmeans"] = entry
    write_atomic(out_dir / SUMMARY_FILE, json.dumps(summary, indent=4) + "\n")
    logger.info(
        f"Run finished in {humanfriendly.format_timespan(time.time() - start_time)}"
    )
    return run_result


BENCHMARK_COLUMNS = [
    "ari",
    "ari_inliers",
    "false_positive_rate",
    "false_negative_rate",
    "num_outliers",
    "tkmeans_ari",
    "tkmeans_ari_inliers",
    "tkmeans_false_positive_rate",
    "tkmeans_false_negative_rate",
]


def run_replicate(config, replicate):
    """
    One simulated replicate of the benchmark, with refits run in the
    calling process. Returns a dict of BENCHMARK_COLUMNS.
    """
    seed = core.derive_seed(config.seed, replicate)
    data = simgen.generate(config.sim_config(core.derive_seed(seed, 0)))
    knots = basis.make_knots(data.curves.grid.lo, data.curves.grid.hi, config.K)
    result = oclust.run_funoclust(
        data.curves,
        knots,
        config.G,
        config.F,
        seed=core.derive_seed(seed, 1),
        bins=config.bins,
        worker_processes=0,
    )
    row = evaluation_summary(data.labels, result.final_labels)
    row["num_outliers"] = result.num_outliers
    tkmeans = evaluate.trimmed_kmeans(
        result.coefs, config.G, config.n_trim, seed=core.derive_seed(seed, 2)
    )
    for key, value in evaluation_summary(data.labels, tkmeans.labels).items():
        row[f"tkmeans_{key}"] = value
    logger.info(
        f"Replicate {replicate}: ARI={row['ari']:.4f} "
        f"outliers={row['num_outliers']} tkmeans ARI={row['tkmeans_ari']:.4f}"
    )
    core.update_progress(1)
    return row


def benchmark(config, *, show_progress=False):
    """
    Runs config.replicates simulated replicates and writes per-replicate
    metrics followed by mean and sd rows to benchmark.csv in config.out_dir.
    """
    if config.out_dir is None:
        raise ValueError("An output directory is required")
    start_time = time.time()
    progress_config = core.ProgressConfig(
        total=config.replicates, units="reps", title="Bench", show=show_progress
    )
    with core.ParallelWorkManager(config.worker_processes, progress_config) as pwm:
        futures = pwm.map(
            run_replicate, [(config, rep) for rep in range(config.replicates)]
        )
    rows = [future.result() for future in futures]

    # FN rate is None for replicates without outliers
    table = np.array(
        [
            [np.nan if row[col] is None else row[col] for col in BENCHMARK_COLUMNS]
            for row in rows
        ],
        dtype=float,
    )
    mean = np.nanmean(table, axis=0)
    sd = np.full(len(BENCHMARK_COLUMNS), np.nan)
    if len(rows) > 1:
        sd = np.nanstd(table, axis=0, ddof=1)
    out_rows = [
        [replicate] + [fmt(x) for x in values] for replicate, values in enumerate(table)
    ]
    out_rows.append(["mean"] + [fmt(x) for x in mean])
    out_rows.append(["sd"] + [fmt(x) for x in sd])
    out_dir = pathlib.Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_atomic(
        out_dir / BENCHMARK_FILE, _csv_text(["replicate"] + BENCHMARK_COLUMNS, out_rows)
    )
    summary = {
        "format_version": FORMAT_VERSION,
        "provenance": provenance.source(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": config.seed,
        "config": config.asdict(),
        "replicates": config.replicates,
        "mean": dict(zip(BENCHMARK_COLUMNS, [float(x) for x in mean])),
    }
    write_atomic(out_dir / SUMMARY_FILE, json.dumps(summary, indent=4) + "\n")
    logger.info(
        f"Benchmark of {config.replicates} replicates finished in "
        f"{humanfriendly.format_timespan(time.time() - start_time)}"
    )
    return rows


def simulate(
    out_dir: PathType, sim_config: simgen.SimConfig
) -> simgen.LabeledCurveSet:
    """
    Writes a simulated dataset in the input curve format, with its true
    labels alongside.
    """
    data = simgen.generate(sim_config)
    out_dir = pathlib.Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_curves(out_dir / CURVES_FILE, data.curves)
    write_labels(out_dir / TRUTH_FILE, data.labels)
    summary = {
        "format_version": FORMAT_VERSION,
        "provenance": provenance.source(),
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "seed": sim_config.seed,
        "num_curves": sim_config.num_curves,
        "simulation": sim_config.asdict(),
    }
    write_atomic(out_dir / SUMMARY_FILE, json.dumps(summary, indent=4) + "\n")
    return data


def inspect(path: PathType) -> Dict[str, list]:
    """
    Returns the tables describing an output directory: summary scalars and,
    if present, the KL trace or the benchmark rows.
    """
    path = pathlib.Path(path)
    summary_path = path / SUMMARY_FILE
    if not summary_path.exists():
        raise ValueError(f"{path} is not a funoclust output directory")
    with open(summary_path) as f:
        summary = json.load(f)
    if summary.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            "Output format version mismatch: "
            f"{summary.get('format_version')} != {FORMAT_VERSION}"
        )
    scalars = []
    for key, value in summary.items():
        if key in ("config", "knots", "confusion"):
            continue
        if isinstance(value, dict):
            for sub_key, sub_value in value.items():
                scalars.append({"key": f"{key}.{sub_key}", "value": sub_value})
        else:
            scalars.append({"key": key, "value": value})
    tables = {"summary": scalars}
    for name in (KL_TRACE_FILE, BENCHMARK_FILE):
        if (path / name).exists():
            with open(path / name, newline="") as f:
                tables[name] = list(csv.DictReader(f))
    return tables
