import contextlib
import logging
import os
import pathlib
import shutil

import click
import coloredlogs
import tabulate

from . import basis, betadist, mixture, pipeline, provenance, simgen

logger = logging.getLogger(__name__)

NUMERIC_ERRORS = (
    mixture.DegenerateClusterError,
    mixture.EmFailureError,
    basis.RankDeficientBasisError,
    betadist.UnusableComponentError,
)


@contextlib.contextmanager
def usage_errors_exit_1():
    try:
        yield
    except click.UsageError as e:
        # Exit status 2 is kept for numeric failures
        e.exit_code = 1
        raise


class NaturalOrderGroup(click.Group):
    """
    List commands in the order they are provided in the help text.
    """

    def list_commands(self, ctx):
        return self.commands.keys()

    def invoke(self, ctx):
        with usage_errors_exit_1():
            return super().invoke(ctx)


class Command(click.Command):
    """
    A command whose bad arguments exit with status 1.
    """

    def make_context(self, info_name, args, parent=None, **extra):
        with usage_errors_exit_1():
            return super().make_context(info_name, args, parent=parent, **extra)


class NumericError(click.ClickException):
    exit_code = 2


@contextlib.contextmanager
def handle_errors():
    """
    Reports numeric degeneracy with exit status 2 and bad input or
    configuration with exit status 1.
    """
    try:
        yield
    except NUMERIC_ERRORS as e:
        raise NumericError(str(e)) from e
    except (ValueError, OSError) as e:
        raise click.ClickException(str(e)) from e


# Common arguments/options
out_dir = click.option(
    "-o",
    "--out-dir",
    required=True,
    type=click.Path(file_okay=False, dir_okay=True),
    help="Directory to write results to",
)

input_path = click.option(
    "-i",
    "--input",
    "input_path",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="CSV file of curves: time points on the first row, one curve per row",
)

simulate_flag = click.option(
    "--simulate",
    is_flag=True,
    flag_value=True,
    help="Run on a simulated dataset instead of an input file",
)

knots = click.option(
    "-K",
    "--knots",
    type=click.IntRange(min=0),
    default=8,
    show_default=True,
    help="Number of equally spaced interior knots",
)

clusters = click.option(
    "-G",
    "--clusters",
    type=click.IntRange(min=1),
    default=2,
    show_default=True,
    help="Number of clusters",
)

max_outliers = click.option(
    "-F",
    "--max-outliers",
    type=click.IntRange(min=0),
    default=50,
    show_default=True,
    help="Maximum number of outliers to trim",
)

bins = click.option(
    "--bins",
    type=click.IntRange(min=2),
    default=10,
    show_default=True,
    help="Number of bins in the KL divergence estimate",
)

seed = click.option(
    "-s", "--seed", type=int, default=42, show_default=True, help="Random seed"
)

impute = click.option(
    "--impute",
    is_flag=True,
    flag_value=True,
    help="Replace missing values with the mean of their column",
)

n_per_class = click.option(
    "--n-per-class",
    type=click.IntRange(min=1),
    default=250,
    show_default=True,
    help="Simulated curves in each class",
)

n_outliers = click.option(
    "--n-outliers",
    type=click.IntRange(min=0),
    default=15,
    show_default=True,
    help="Simulated outlier curves",
)

num_points = click.option(
    "--num-points",
    type=click.IntRange(min=2),
    default=100,
    show_default=True,
    help="Simulated time points per curve",
)

verbose = click.option("-v", "--verbose", count=True, help="Increase verbosity")

force = click.option(
    "-f",
    "--force",
    is_flag=True,
    flag_value=True,
    help="Force overwriting of existing directories",
)

version = click.version_option(version=f"{provenance.__version__}")

worker_processes = click.option(
    "-p", "--worker-processes", type=int, default=1, help="Number of worker processes"
)


def setup_logging(verbosity):
    level = "WARNING"
    if verbosity == 1:
        level = "INFO"
    elif verbosity >= 2:
        level = "DEBUG"
    coloredlogs.install(level=level)


def check_overwrite_dir(path, force):
    path = pathlib.Path(path)
    if path.exists():
        if not force:
            click.confirm(
                f"Do you want to overwrite {path}? (use --force to skip this check)",
                abort=True,
            )
        # Rename first so that a partially deleted directory is never
        # mistaken for a finished one.
        tmp_delete_path = path.with_suffix(f"{path.suffix}.{os.getpid()}.DELETING")
        logger.warning(f"Overwriting {path} (renamed to {tmp_delete_path} first)")
        os.rename(path, tmp_delete_path)
        shutil.rmtree(tmp_delete_path)


@click.command(cls=Command)
@input_path
@simulate_flag
@out_dir
@knots
@clusters
@max_outliers
@bins
@seed
@impute
@click.option(
    "--baseline",
    is_flag=True,
    flag_value=True,
    help="Also run trimmed k-means, trimming as many curves as were flagged",
)
@n_per_class
@n_outliers
@num_points
@force
@verbose
@worker_processes
def run(
    input_path,
    simulate,
    out_dir,
    knots,
    clusters,
    max_outliers,
    bins,
    seed,
    impute,
    baseline,
    n_per_class,
    n_outliers,
    num_points,
    force,
    verbose,
    worker_processes,
):
    """
    Cluster curves and trim outliers, writing results to OUT_DIR.
    """
    setup_logging(verbose)
    if (input_path is None) == (not simulate):
        raise click.ClickException("Specify exactly one of --input and --simulate")
    with handle_errors():
        config = pipeline.RunConfig(
            input_path=input_path,
            simulate=simulate,
            K=knots,
            G=clusters,
            F=max_outliers,
            bins=bins,
            seed=seed,
            impute_missing=impute,
            out_dir=out_dir,
            worker_processes=worker_processes,
            baseline=baseline,
            n_per_class=n_per_class,
            n_outliers=n_outliers,
            num_points=num_points,
        )
        run_input = pipeline.load_input(config)
    check_overwrite_dir(out_dir, force)
    with handle_errors():
        run_result = pipeline.run(config, run_input, show_progress=True)
    summary = run_result.summary
    click.echo(
        f"{summary['num_outliers']} outliers; cluster sizes "
        f"{summary['cluster_sizes']}"
    )
    confusion = run_result.confusion
    if confusion is not None:
        click.echo(confusion.table())
        click.echo(f"ARI: {summary['evaluation']['ari']:.4f}")


@click.command(cls=Command)
@out_dir
@knots
@clusters
@max_outliers
@bins
@seed
@click.option(
    "-r",
    "--replicates",
    type=click.IntRange(min=1),
    default=10,
    show_default=True,
    help="Number of simulated replicates",
)
@click.option(
    "--n-trim",
    type=click.IntRange(min=0),
    default=25,
    show_default=True,
    help="Curves trimmed by the trimmed k-means baseline",
)
@n_per_class
@n_outliers
@num_points
@force
@verbose
@worker_processes
def benchmark(
    out_dir,
    knots,
    clusters,
    max_outliers,
    bins,
    seed,
    replicates,
    n_trim,
    n_per_class,
    n_outliers,
    num_points,
    force,
    verbose,
    worker_processes,
):
    """
    Run simulated replicates and tabulate ARI and outlier error rates
    against the trimmed k-means baseline.
    """
    setup_logging(verbose)
    with handle_errors():
        config = pipeline.RunConfig(
            simulate=True,
            K=knots,
            G=clusters,
            F=max_outliers,
            bins=bins,
            seed=seed,
            out_dir=out_dir,
            worker_processes=worker_processes,
            replicates=replicates,
            n_trim=n_trim,
            n_per_class=n_per_class,
            n_outliers=n_outliers,
            num_points=num_points,
        )
    check_overwrite_dir(out_dir, force)
    with handle_errors():
        pipeline.benchmark(config, show_progress=True)
    tables = pipeline.inspect(out_dir)
    click.echo(tabulate.tabulate(tables[pipeline.BENCHMARK_FILE], headers="keys"))


@click.command(cls=Command)
@click.argument("out_dir", type=click.Path(file_okay=False, dir_okay=True))
@seed
@n_per_class
@n_outliers
@num_points
@force
@verbose
def simulate(out_dir, seed, n_per_class, n_outliers, num_points, force, verbose):
    """
    Write a simulated dataset of two curve classes plus outliers to OUT_DIR,
    as curves.csv in the input format, truth.csv and summary.json.
    """
    setup_logging(verbose)
    with handle_errors():
        sim_config = simgen.SimConfig(
            n_per_class=n_per_class,
            n_outliers=n_outliers,
            num_points=num_points,
            seed=seed,
        )
    check_overwrite_dir(out_dir, force)
    with handle_errors():
        pipeline.simulate(out_dir, sim_config)


@click.command(cls=Command)
@click.argument("path", type=click.Path(exists=True, file_okay=False))
@verbose
def inspect(path, verbose):
    """
    Inspect the results in an output directory.
    """
    setup_logging(verbose)
    with handle_errors():
        tables = pipeline.inspect(path)
    for name, rows in tables.items():
        if name != "summary":
            click.echo(f"\n{name}")
        click.echo(tabulate.tabulate(rows, headers="keys"))


@version
@click.group(cls=NaturalOrderGroup)
def funoclust():
    """
    Cluster functional data while trimming outliers.

    Curves are filtered through a cubic B-spline basis and the coefficients
    clustered with a Gaussian mixture. Candidate outliers are trimmed one at
    a time, and the number trimmed is the one at which the subset
    log-likelihoods best match their beta reference law:

    $ funoclust run --input curves.csv --out-dir results

    The benchmark command repeats this over simulated replicates and
    compares against trimmed k-means:

    $ funoclust benchmark --replicates 10 --out-dir bench
    """


funoclust.add_command(run)
funoclust.add_command(benchmark)
funoclust.add_command(simulate)
funoclust.add_command(inspect)
