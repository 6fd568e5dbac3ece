from ._cli import main, run_cli
from ._errors import (
    AllRestartsDegenerateError,
    ConvergenceError,
    CostcoError,
    DataFormatError,
    DegenerateComponentError,
    DimensionError,
    UnsupportedTypeAnnotationError,
    UsageError,
)
from ._initialization import (
    InitConfig,
    initialize,
    perturb,
    restart_start,
    rtpm_init,
    svd_init,
    tensor_start,
)
from ._io import read_coords, read_matrix, read_tensor, write_matrix, write_tensor
from ._model import (
    CoupledModel,
    CouplingSpec,
    CovariateFactors,
    CPFactors,
    RecoveryReport,
    align,
    holdout_error,
    metrics,
    reconstruct_covariate,
)
from ._serialization import ModelFile, from_yaml, load_model, save_model, to_yaml
from ._simulation import (
    Scenario,
    SimulatedInstance,
    corrupt,
    gen_truth,
    run_experiment,
    run_grid,
    simulate,
)
from ._solver import (
    FitResult,
    SolverConfig,
    SolverState,
    complete,
    fit,
    objective,
    residual_matrix,
    residual_tensor,
    solve_mode,
    sweep,
    truncate,
    update_coupled_mode,
    update_covariate,
    update_uncoupled_mode,
)
from ._tensors import (
    Covariate,
    CoupledData,
    ObservedTensor,
    dense_contract,
    frobenius_norm,
    masked_contract,
    masked_weight,
    project,
    reconstruct,
    reconstruct_at,
    split_observed,
)
from ._tuning import TuneGrid, TuneResult, bic, tune

__all__ = [
    "AllRestartsDegenerateError",
    "ConvergenceError",
    "CostcoError",
    "DataFormatError",
    "DegenerateComponentError",
    "DimensionError",
    "UnsupportedTypeAnnotationError",
    "UsageError",
    "ObservedTensor",
    "Covariate",
    "CoupledData",
    "CouplingSpec",
    "reconstruct",
    "reconstruct_at",
    "project",
    "masked_contract",
    "masked_weight",
    "dense_contract",
    "frobenius_norm",
    "split_observed",
    "CPFactors",
    "CovariateFactors",
    "CoupledModel",
    "RecoveryReport",
    "reconstruct_covariate",
    "align",
    "metrics",
    "holdout_error",
    "SolverConfig",
    "SolverState",
    "FitResult",
    "truncate",
    "residual_tensor",
    "residual_matrix",
    "solve_mode",
    "update_coupled_mode",
    "update_uncoupled_mode",
    "update_covariate",
    "sweep",
    "objective",
    "fit",
    "complete",
    "InitConfig",
    "svd_init",
    "rtpm_init",
    "initialize",
    "perturb",
    "restart_start",
    "tensor_start",
    "TuneGrid",
    "TuneResult",
    "bic",
    "tune",
    "Scenario",
    "SimulatedInstance",
    "gen_truth",
    "corrupt",
    "simulate",
    "run_experiment",
    "run_grid",
    "read_tensor",
    "write_tensor",
    "read_matrix",
    "write_matrix",
    "read_coords",
    "to_yaml",
    "from_yaml",
    "ModelFile",
    "save_model",
    "load_model",
    "run_cli",
    "main",
]
