"""The `costco` command: simulate, fit, complete, evaluate, tune, experiment and split.

Each subcommand is a frozen dataclass; its flags and help text are generated from the
fields. Exit codes: 0 success, 1 usage error, 2 bad data or missing file, 3 numerical
failure.
"""

import dataclasses
import logging
import pathlib
import sys
from typing import Callable, Dict, List, Optional, Sequence, TextIO, Tuple

import pandas as pd
import termcolor

from . import _io, _strings
from ._errors import (
    AllRestartsDegenerateError,
    ConvergenceError,
    DataFormatError,
    DegenerateComponentError,
    DimensionError,
    UsageError,
)
from ._initialization import InitConfig, initialize
from ._model import holdout_error, metrics
from ._parsers import CommandTable
from ._random import make_rng
from ._serialization import ModelFile, load_model, save_model
from ._simulation import Scenario, run_grid, simulate
from ._solver import SolverConfig, complete, fit
from ._tensors import Covariate, CoupledData, frobenius_norm, split_observed
from ._tuning import TuneGrid, tune

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


@dataclasses.dataclass(frozen=True)
class Simulate:
    """Draw a synthetic coupled dataset and its ground truth.

    Writes tensor.txt, covariate_<j>.txt per coupling and truth.yaml."""

    out_dir: pathlib.Path  # Output directory; created if missing.
    scenario: Scenario = Scenario()
    replica: int = 0  # Replica index; selects the random streams.


@dataclasses.dataclass(frozen=True)
class Fit:
    """Fit a coupled sparse CP model to an observed tensor and its covariates."""

    tensor: pathlib.Path  # Observed tensor file.
    out: pathlib.Path  # Model file to write.

    # Covariate matrix files, and the tensor mode each one is coupled to.
    covariates: Tuple[pathlib.Path, ...] = ()
    coupled_modes: Tuple[int, ...] = ()

    trace: Optional[pathlib.Path] = None  # Objective trace file, one value per line.
    solver: SolverConfig = SolverConfig()
    init: InitConfig = InitConfig()


@dataclasses.dataclass(frozen=True)
class Complete:
    """Predict tensor values at a list of coordinates."""

    model: pathlib.Path
    coords: pathlib.Path  # Coordinate file. Output coordinates use its declared base.
    out: Optional[pathlib.Path] = None  # Defaults to stdout.


@dataclasses.dataclass(frozen=True)
class Evaluate:
    """Recovery errors of an estimated model against the truth, as CSV."""

    model: pathlib.Path
    truth: pathlib.Path
    test_tensor: Optional[pathlib.Path] = None  # Held-out entries; adds holdout_error.
    out: Optional[pathlib.Path] = None  # Defaults to stdout.


@dataclasses.dataclass(frozen=True)
class Tune:
    """Choose the rank and sparsity by BIC, then write the selected model."""

    tensor: pathlib.Path
    out: pathlib.Path

    # Covariate matrix files, and the tensor mode each one is coupled to.
    covariates: Tuple[pathlib.Path, ...] = ()
    coupled_modes: Tuple[int, ...] = ()

    trace: Optional[pathlib.Path] = None
    grid: TuneGrid = TuneGrid()
    solver: SolverConfig = SolverConfig()
    init: InitConfig = InitConfig()


@dataclasses.dataclass(frozen=True)
class Experiment:
    """Replicated recovery experiment over a grid of scenarios, comparing the coupled
    solver with the no-covariate ablation."""

    out: pathlib.Path  # CSV table.
    gnuplot: Optional[pathlib.Path] = None  # Optional whitespace-separated copy.

    # Scenario axes. An empty axis keeps the scenario's value.
    reveal_probs: Tuple[float, ...] = ()
    eta_tensors: Tuple[float, ...] = ()
    eta_matrices: Tuple[float, ...] = ()
    coupled_dims: Tuple[int, ...] = ()
    ranks: Tuple[int, ...] = ()

    tune: bool = False  # Tune rank and sparsity by BIC in every replica.
    scenario: Scenario = Scenario()
    grid: TuneGrid = TuneGrid()
    solver: SolverConfig = SolverConfig()
    init: InitConfig = InitConfig()


@dataclasses.dataclass(frozen=True)
class Split:
    """Randomly split the observed entries of a tensor file into train and test
    files."""

    tensor: pathlib.Path
    train_out: pathlib.Path
    test_out: pathlib.Path
    test_fraction: float = 0.1
    seed: int = 0


COMMANDS = CommandTable(
    commands={
        _strings.hyphen_separated_from_camel_case(cls.__name__): cls
        for cls in (Simulate, Fit, Complete, Evaluate, Tune, Experiment, Split)
    },
    description="Covariate-assisted sparse tensor completion.",
)


def _load_data(
    tensor: pathlib.Path,
    covariates: Sequence[pathlib.Path],
    coupled_modes: Sequence[int],
) -> CoupledData:
    if len(covariates) != len(coupled_modes):
        raise UsageError(
            f"Got {len(covariates)} covariate files but {len(coupled_modes)} coupled modes."
        )
    loaded = []
    for path, mode in zip(covariates, coupled_modes):
        values, mask = _io.read_matrix(path)
        loaded.append(Covariate(mode=mode, values=values, mask=mask))
    return CoupledData(tensor=_io.read_tensor(tensor), covariates=tuple(loaded))


def _run_simulate(cmd: Simulate, stdout: TextIO) -> None:
    instance = simulate(cmd.scenario, cmd.replica)
    cmd.out_dir.mkdir(parents=True, exist_ok=True)
    _io.write_tensor(cmd.out_dir / "tensor.txt", instance.data.tensor)
    for j, covariate in enumerate(instance.data.covariates):
        _io.write_matrix(cmd.out_dir / f"covariate_{j}.txt", covariate.values, covariate.mask)
    save_model(
        cmd.out_dir / "truth.yaml",
        ModelFile(
            model=instance.truth,
            seed=cmd.scenario.seed,
            metadata={"truth_tensor_norm": frobenius_norm(instance.truth_tensor)},
        ),
    )
    stdout.write(
        f"Wrote {instance.data.tensor.nnz} observed entries and"
        f" {len(instance.data.covariates)} covariates to {cmd.out_dir}.\n"
    )


def _run_fit(cmd: Fit, stdout: TextIO) -> None:
    data = _load_data(cmd.tensor, cmd.covariates, cmd.coupled_modes)
    init = initialize(data, None, cmd.solver.rank, cmd.init)
    result = fit(data, cmd.solver, init, cmd.init)
    save_model(cmd.out, ModelFile.from_fit(result))
    if cmd.trace is not None:
        _io.write_trace(cmd.trace, result.objective_trace)
    stdout.write(
        f"objective {_io.format_value(result.objective)} after {result.iterations} sweeps"
        f" (restart {result.restart_index}, "
        + ("converged" if result.converged else "not converged")
        + ")\n"
    )


def _run_complete(cmd: Complete, stdout: TextIO) -> None:
    model = load_model(cmd.model).model
    coords, base = _io.read_coords_with_base(cmd.coords, model.dims)
    values = complete(model, coords)
    if cmd.out is None:
        _io.write_values(stdout, coords, values, base)
        return
    with open(cmd.out, "w") as f:
        _io.write_values(f, coords, values, base)


def _run_evaluate(cmd: Evaluate, stdout: TextIO) -> None:
    estimate = load_model(cmd.model).model
    truth = load_model(cmd.truth).model
    if not estimate.couplings:
        truth = truth.without_couplings()
    rows: List[Tuple[str, Optional[int], float]] = metrics(estimate, truth).as_rows()
    if cmd.test_tensor is not None:
        test = _io.read_tensor(cmd.test_tensor)
        rows.append(("holdout_error", None, holdout_error(estimate, test)))

    frame = pd.DataFrame.from_records(rows, columns=["metric", "index", "value"])
    frame["index"] = frame["index"].astype("Int64")
    frame.to_csv(stdout if cmd.out is None else cmd.out, index=False, float_format="%.17g")


def _run_tune(cmd: Tune, stdout: TextIO) -> None:
    data = _load_data(cmd.tensor, cmd.covariates, cmd.coupled_modes)
    result = tune(data, cmd.grid, cmd.solver, cmd.init)
    save_model(
        cmd.out,
        ModelFile.from_fit(
            result.fit, metadata={"rank": float(result.rank), "fraction": result.fraction}
        ),
    )
    if cmd.trace is not None:
        _io.write_trace(cmd.trace, result.fit.objective_trace)
    stdout.write("rank,bic\n")
    for rank, value in result.rank_bics:
        stdout.write(f"{rank},{_io.format_value(value)}\n")
    stdout.write("fraction,bic\n")
    for fraction, value in result.sparsity_bics:
        stdout.write(f"{fraction},{_io.format_value(value)}\n")
    stdout.write(
        f"selected rank {result.rank}, fraction {result.fraction},"
        f" budgets {' '.join(map(str, result.sparsity))}"
    )
    if result.covariate_sparsity:
        stdout.write(
            f", covariate budgets {' '.join(map(str, result.covariate_sparsity))}"
        )
    stdout.write("\n")


def _run_experiment(cmd: Experiment, stdout: TextIO) -> None:
    frame = run_grid(
        cmd.scenario,
        cmd.solver,
        cmd.init,
        cmd.grid if cmd.tune else None,
        reveal_probs=cmd.reveal_probs,
        eta_tensors=cmd.eta_tensors,
        eta_matrices=cmd.eta_matrices,
        coupled_dims=cmd.coupled_dims,
        ranks=cmd.ranks,
    )
    frame.to_csv(cmd.out, index=False, float_format="%.17g")
    if cmd.gnuplot is not None:
        _io.write_gnuplot(cmd.gnuplot, frame)
    stdout.write(f"Wrote {len(frame)} rows to {cmd.out}.\n")


def _run_split(cmd: Split, stdout: TextIO) -> None:
    tensor = _io.read_tensor(cmd.tensor)
    train, test = split_observed(tensor, cmd.test_fraction, make_rng(cmd.seed, "split"))
    _io.write_tensor(cmd.train_out, train)
    _io.write_tensor(cmd.test_out, test)
    stdout.write(f"{train.nnz} training and {test.nnz} test entries.\n")


_HANDLERS: Dict[type, Callable] = {
    Simulate: _run_simulate,
    Fit: _run_fit,
    Complete: _run_complete,
    Evaluate: _run_evaluate,
    Tune: _run_tune,
    Experiment: _run_experiment,
    Split: _run_split,
}


def _report(message: str, stderr: TextIO) -> None:
    stderr.write(termcolor.colored("error:", "red", attrs=["bold"]) + f" {message}\n")


def run_cli(
    argv: Optional[Sequence[str]] = None,
    stdout: Optional[TextIO] = None,
    stderr: Optional[TextIO] = None,
) -> int:
    """Parse `argv`, run the subcommand, and return its exit code."""
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        _, command, options = COMMANDS.parse(None if argv is None else list(argv))
    except UsageError as e:
        _report(str(e), stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help.
        return EXIT_OK if e.code is None else int(e.code)

    logging.basicConfig(
        level=getattr(logging, options.log_level),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        _HANDLERS[type(command)](command, stdout)
    except UsageError as e:
        _report(str(e), stderr)
        return EXIT_USAGE
    except (DimensionError, DataFormatError) as e:
        _report(str(e), stderr)
        return EXIT_DATA
    except FileNotFoundError as e:
        _report(f"{e.strerror}: {e.filename}", stderr)
        return EXIT_DATA
    except (DegenerateComponentError, AllRestartsDegenerateError, ConvergenceError) as e:
        _report(str(e), stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def main() -> None:
    sys.exit(run_cli())
