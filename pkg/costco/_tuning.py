"""BIC-type model selection: rank first with dense factors, then a uniform sparsity
fraction at the chosen rank."""

import dataclasses
import logging
import math
from typing import List, Optional, Tuple, Union

import numpy as np

from ._errors import AllRestartsDegenerateError, DegenerateComponentError, DimensionError
from ._initialization import InitConfig, initialize
from ._model import CoupledModel, covariate_product
from ._solver import FitResult, SolverConfig, budget_from_fraction, fit
from ._tensors import CoupledData, reconstruct_at

logger = logging.getLogger(__name__)

_MISFIT_FLOOR = 1e-30


@dataclasses.dataclass(frozen=True)
class TuneGrid:
    ranks: Tuple[int, ...] = (1, 2, 3, 4, 5)  # Candidate ranks for the first stage.

    # Candidate nonzero fractions for the second stage, applied to every tensor mode
    # and every covariate factor.
    sparsity_fracs: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 0.9, 1.0)

    def __post_init__(self) -> None:
        if len(self.ranks) == 0 or len(self.sparsity_fracs) == 0:
            raise DimensionError("Tuning grids must be nonempty.")
        if any(r < 1 for r in self.ranks):
            raise DimensionError(f"Candidate ranks must be positive, got {self.ranks}.")
        if any(not 0.0 < f <= 1.0 for f in self.sparsity_fracs):
            raise DimensionError(
                f"Sparsity fractions must lie in (0, 1], got {self.sparsity_fracs}."
            )
        object.__setattr__(self, "ranks", tuple(sorted(set(self.ranks))))
        object.__setattr__(self, "sparsity_fracs", tuple(sorted(set(self.sparsity_fracs))))


@dataclasses.dataclass(frozen=True, eq=False)
class TuneResult:
    rank: int
    sparsity: Tuple[int, ...]  # Tensor mode budgets.
    covariate_sparsity: Tuple[int, ...]  # Covariate factor budgets, in coupling order.
    fraction: float
    fit: FitResult
    rank_bics: Tuple[Tuple[int, float], ...]  # (rank, BIC) for every first-stage fit.
    sparsity_bics: Tuple[Tuple[float, float], ...]  # (fraction, BIC), second stage.


def _nonzeros(model: CoupledModel) -> int:
    count = sum(int(np.count_nonzero(f)) for f in model.cp.factors)
    count += sum(int(np.count_nonzero(c.factor)) for c in model.couplings)
    return count


def bic(data: CoupledData, result: Union[FitResult, CoupledModel]) -> float:
    """log(‖P_Ω(T − T̂)‖²/∏n + Σ_j ‖P_Ω_M(M_j − M̂_j)‖²/(n_mode·n_v)) + log(N)/N · nnz,
    where N = ∏n + Σ_j n_mode·n_v and nnz counts the nonzeros of every factor column
    (tensor and covariate). The misfit is floored at 1e-30."""
    model = result.model if isinstance(result, FitResult) else result
    if model.dims != data.dims:
        raise DimensionError(f"Model dims {model.dims} vs data dims {data.dims}.")
    if data.tensor.nnz == 0:
        raise DimensionError("BIC needs at least one observed tensor entry.")
    if len(model.couplings) != len(data.covariates):
        raise DimensionError(
            f"Model has {len(model.couplings)} couplings, data has"
            f" {len(data.covariates)} covariates."
        )

    tensor_size = float(np.prod(data.dims, dtype=np.float64))
    residual = data.tensor.values - reconstruct_at(model.cp, data.tensor.coords)
    misfit = float(residual @ residual) / tensor_size
    total_size = tensor_size
    for coupling, covariate in zip(model.couplings, data.covariates):
        fitted = covariate_product(model.cp.factors[covariate.mode], coupling)
        diff = covariate.observed(covariate.values - fitted)
        size = float(covariate.values.size)
        misfit += float(np.sum(diff * diff)) / size
        total_size += size

    penalty = math.log(total_size) / total_size * _nonzeros(model)
    return math.log(max(misfit, _MISFIT_FLOOR)) + penalty


def _fit_candidate(
    data: CoupledData,
    config: SolverConfig,
    init_config: InitConfig,
) -> Optional[Tuple[FitResult, float]]:
    try:
        init = initialize(data, None, config.rank, init_config)
        result = fit(data, config, init, init_config)
    except (AllRestartsDegenerateError, DegenerateComponentError) as e:
        logger.warning("Skipping rank %d, sparsity %s: %s", config.rank, config.sparsity, e)
        return None
    return result, bic(data, result)


def tune(
    data: CoupledData,
    grid: TuneGrid,
    config: SolverConfig,
    init_config: Optional[InitConfig] = None,
) -> TuneResult:
    """Sequential search. Stage one fits every candidate rank with dense factors; stage
    two refits the chosen rank at every sparsity fraction, applied alike to every
    tensor mode and covariate factor. Each stage keeps the smallest BIC; ties go to the
    smaller rank, then the smaller fraction. Grid points whose every restart
    degenerates are skipped."""
    if init_config is None:
        init_config = InitConfig()
    widths = [c.width for c in data.covariates]

    rank_bics: List[Tuple[int, float]] = []
    best: Optional[Tuple[int, FitResult, float]] = None
    for rank in grid.ranks:
        candidate = _fit_candidate(
            data,
            dataclasses.replace(config, rank=rank, sparsity=None, covariate_sparsity=None),
            init_config,
        )
        if candidate is None:
            continue
        result, value = candidate
        logger.info("Rank %d: BIC %.6f", rank, value)
        rank_bics.append((rank, value))
        if best is None or value < best[2]:
            best = (rank, result, value)
    if best is None:
        raise AllRestartsDegenerateError("Every candidate rank produced degenerate fits.")
    rank = best[0]

    sparsity_bics: List[Tuple[float, float]] = []
    chosen: Optional[Tuple[float, SolverConfig, FitResult, float]] = None
    for fraction in grid.sparsity_fracs:
        candidate_config = dataclasses.replace(
            config,
            rank=rank,
            sparsity=tuple(budget_from_fraction(n, fraction) for n in data.dims),
            covariate_sparsity=tuple(budget_from_fraction(w, fraction) for w in widths),
        )
        candidate = _fit_candidate(data, candidate_config, init_config)
        if candidate is None:
            continue
        result, value = candidate
        logger.info("Rank %d, fraction %.2f: BIC %.6f", rank, fraction, value)
        sparsity_bics.append((fraction, value))
        if chosen is None or value < chosen[3]:
            chosen = (fraction, candidate_config, result, value)
    if chosen is None:
        raise AllRestartsDegenerateError(
            f"Every sparsity fraction at rank {rank} produced degenerate fits."
        )

    assert chosen[1].sparsity is not None and chosen[1].covariate_sparsity is not None
    return TuneResult(
        rank=rank,
        sparsity=chosen[1].sparsity,
        covariate_sparsity=chosen[1].covariate_sparsity,
        fraction=chosen[0],
        fit=chosen[2],
        rank_bics=tuple(rank_bics),
        sparsity_bics=tuple(sparsity_bics),
    )
