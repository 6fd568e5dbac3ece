"""Covariate-assisted sparse tensor completion by truncated, masked, coupled
alternating least squares.

Each sweep visits the rank-1 components in turn. For component r the residuals
exclude r's own contribution, and every block of r (coupled tensor modes, uncoupled
tensor modes, the weight, then the covariate factors) is replaced by its least-squares
solution, hard-thresholded to its sparsity budget and renormalized.
"""

import dataclasses
import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ._errors import AllRestartsDegenerateError, DegenerateComponentError, DimensionError
from ._initialization import InitConfig, restart_start
from ._model import CoupledModel, CovariateFactors, CPFactors, covariate_product
from ._tensors import (
    Covariate,
    CoupledData,
    ObservedTensor,
    masked_contract,
    masked_weight,
    rank1_least_squares,
    reconstruct_at,
)

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Settings for the coupled sparse ALS solver."""

    rank: int = 2  # Number of rank-1 components R.

    # Nonzero budget of each tensor mode's columns. Defaults to the mode size (dense).
    sparsity: Optional[Tuple[int, ...]] = None

    # Nonzero budget of each covariate factor, in coupling order. Defaults to the
    # covariate width (dense).
    covariate_sparsity: Optional[Tuple[int, ...]] = None

    tol: float = 1e-7
    """Stop when the summed relative change of the tensor factor matrices drops below
    this."""

    max_iters: int = 200  # Maximum number of sweeps per restart.
    restarts: int = 10  # Number of initializations tried; the best objective wins.
    fix_shared: bool = False  # Keep coupled-mode factors at their initial values.
    seed: int = 0  # Root seed for restart starts.

    def __post_init__(self) -> None:
        if self.rank < 0:
            raise DimensionError(f"Rank must be nonnegative, got {self.rank}.")
        if self.max_iters < 1:
            raise DimensionError(f"max_iters must be at least 1, got {self.max_iters}.")
        if not self.tol > 0.0:
            raise DimensionError(f"tol must be positive, got {self.tol}.")
        if self.restarts < 1:
            raise DimensionError(f"restarts must be at least 1, got {self.restarts}.")

    def mode_budgets(self, dims: Sequence[int]) -> Tuple[int, ...]:
        if self.sparsity is None:
            return tuple(dims)
        if len(self.sparsity) != len(dims):
            raise DimensionError(
                f"Got {len(self.sparsity)} sparsity budgets for {len(dims)} modes."
            )
        _check_budgets(self.sparsity, dims, "tensor mode")
        return tuple(self.sparsity)

    def covariate_budgets(self, widths: Sequence[int]) -> Tuple[int, ...]:
        if self.covariate_sparsity is None:
            return tuple(widths)
        if len(self.covariate_sparsity) != len(widths):
            raise DimensionError(
                f"Got {len(self.covariate_sparsity)} covariate budgets for"
                f" {len(widths)} couplings."
            )
        _check_budgets(self.covariate_sparsity, widths, "covariate")
        return tuple(self.covariate_sparsity)


def _check_budgets(budgets: Sequence[int], sizes: Sequence[int], what: str) -> None:
    for index, (s, n) in enumerate(zip(budgets, sizes)):
        if not 1 <= s <= n:
            raise DimensionError(f"Budget {s} for {what} {index} must lie in [1, {n}].")


def budget_from_fraction(n: int, fraction: float) -> int:
    """Number of nonzeros kept when keeping a fraction of n entries."""
    if not 0.0 < fraction <= 1.0:
        raise DimensionError(f"Sparsity fraction must lie in (0, 1], got {fraction}.")
    return min(n, max(1, math.ceil(fraction * n - 1e-9)))


@dataclasses.dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of the best restart of a fit."""

    model: CoupledModel
    objective_trace: Tuple[float, ...]  # Initial objective, then one value per sweep.
    iterations: int
    converged: bool
    restart_index: int
    seed: int

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


@dataclasses.dataclass(eq=False)
class SolverState:
    """Mutable working copy of a coupled model."""

    weights: np.ndarray
    factors: List[np.ndarray]
    sigmas: List[np.ndarray]
    covariate_factors: List[np.ndarray]
    coupling_modes: Tuple[int, ...]

    @staticmethod
    def from_model(model: CoupledModel) -> "SolverState":
        return SolverState(
            weights=model.cp.weights.copy(),
            factors=[f.copy() for f in model.cp.factors],
            sigmas=[c.weights.copy() for c in model.couplings],
            covariate_factors=[c.factor.copy() for c in model.couplings],
            coupling_modes=tuple(c.mode for c in model.couplings),
        )

    def to_model(self) -> CoupledModel:
        return CoupledModel(
            cp=CPFactors(
                weights=self.weights.copy(),
                factors=tuple(f.copy() for f in self.factors),
            ),
            couplings=tuple(
                CovariateFactors(mode=mode, weights=sigma.copy(), factor=v.copy())
                for mode, sigma, v in zip(
                    self.coupling_modes, self.sigmas, self.covariate_factors
                )
            ),
        )

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])


ModelLike = Union[CoupledModel, SolverState]


def truncate(v: np.ndarray, s: int) -> np.ndarray:
    """Keep the s largest-magnitude entries of v, zero the rest. Among equal
    magnitudes the earliest indices are kept."""
    v = np.asarray(v, dtype=np.float64)
    if not 1 <= s <= v.shape[0]:
        raise DimensionError(f"Budget {s} out of range for a vector of length {v.shape[0]}.")
    if s == v.shape[0]:
        return v.copy()
    keep = np.argsort(-np.abs(v), kind="stable")[:s]
    out = np.zeros_like(v)
    out[keep] = v[keep]
    return out


def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    # Indices without information get 0.
    out = np.zeros_like(numerator)
    nonzero = denominator != 0.0
    out[nonzero] = numerator[nonzero] / denominator[nonzero]
    return out


def _as_state(model: ModelLike) -> SolverState:
    return model if isinstance(model, SolverState) else SolverState.from_model(model)


def residual_tensor(
    obs: ObservedTensor, model: ModelLike, r: int
) -> ObservedTensor:
    """P_Ω(T) − P_Ω(Σ_{m≠r} λ_m u¹_m ⊗ … ⊗ u^K_m)."""
    state = _as_state(model)
    if not 0 <= r < state.rank:
        raise DimensionError(f"Component {r} out of range for rank {state.rank}.")
    rows = np.ones((obs.nnz, state.rank))
    for mode, factor in enumerate(state.factors):
        rows *= factor[obs.coords[:, mode], :]
    weights = state.weights.copy()
    weights[r] = 0.0
    return obs.with_values(obs.values - rows @ weights)


def residual_matrix(
    covariate: Covariate,
    model: ModelLike,
    coupling_index: int,
    r: int,
) -> np.ndarray:
    """M − Σ_{m≠r} σ_m u_m ⊗ v_m for one coupling, zeroed outside Ω_M."""
    state = _as_state(model)
    if not 0 <= coupling_index < len(state.coupling_modes):
        raise DimensionError(f"Model has no coupling {coupling_index}.")
    if not 0 <= r < state.rank:
        raise DimensionError(f"Component {r} out of range for rank {state.rank}.")
    mode = state.coupling_modes[coupling_index]
    if covariate.mode != mode:
        raise DimensionError(
            f"Covariate is coupled to mode {covariate.mode}, model coupling"
            f" {coupling_index} to mode {mode}."
        )
    sigma = state.sigmas[coupling_index].copy()
    sigma[r] = 0.0
    fitted = covariate_product(
        state.factors[mode],
        CovariateFactors(
            mode=mode, weights=sigma, factor=state.covariate_factors[coupling_index]
        ),
    )
    return covariate.observed(covariate.values - fitted)


@dataclasses.dataclass(frozen=True, eq=False)
class _Residuals:
    tensor: ObservedTensor
    matrices: Tuple[np.ndarray, ...]


def _residuals(state: SolverState, data: CoupledData, r: int) -> _Residuals:
    return _Residuals(
        tensor=residual_tensor(data.tensor, state, r),
        matrices=tuple(
            residual_matrix(covariate, state, j, r)
            for j, covariate in enumerate(data.covariates)
        ),
    )


def _fixed_columns(
    state: SolverState, r: int, free_mode: int
) -> Dict[int, np.ndarray]:
    return {
        mode: factor[:, r]
        for mode, factor in enumerate(state.factors)
        if mode != free_mode
    }


def solve_mode(
    state: SolverState,
    data: CoupledData,
    r: int,
    mode: int,
    residuals: Optional[_Residuals] = None,
) -> np.ndarray:
    """Untruncated least-squares update of column r of a tensor mode.

    Uncoupled modes solve for the scaled column λ_r·u: res_T(…, I, …) / P_Ω(…, I, …)
    with squared fixed columns in the denominator. Coupled modes solve for the unit
    column with λ_r and every coupling's σ_r held fixed:
    (λ res_T(I, …) + Σ σ res_M v) / (λ² P_Ω(I, …²) + Σ σ² Σ_{Ω_M} v²)."""
    if residuals is None:
        residuals = _residuals(state, data, r)
    fixed = _fixed_columns(state, r, mode)
    numerator = masked_contract(residuals.tensor, fixed, mode)
    denominator = masked_weight(residuals.tensor, fixed, mode)

    couplings = [j for j, m in enumerate(state.coupling_modes) if m == mode]
    if couplings:
        lam = state.weights[r]
        numerator = lam * numerator
        denominator = lam**2 * denominator
        for j in couplings:
            sigma = state.sigmas[j][r]
            v = state.covariate_factors[j][:, r]
            numerator = numerator + sigma * (residuals.matrices[j] @ v)
            mask = data.covariates[j].mask
            if mask is None:
                denominator = denominator + sigma**2 * float(v @ v)
            else:
                denominator = denominator + sigma**2 * (mask @ (v * v))
    return _safe_divide(numerator, denominator)


def _normalized(
    vector: np.ndarray, r: int, what: str
) -> Tuple[np.ndarray, float]:
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise DegenerateComponentError(
            f"Component {r} collapsed to zero in {what}.", rank_index=r, mode=what
        )
    return vector / norm, norm


def update_coupled_mode(
    state: SolverState,
    data: CoupledData,
    config: SolverConfig,
    r: int,
    mode: int,
    residuals: Optional[_Residuals] = None,
) -> SolverState:
    """Shared-component update of a coupled tensor mode. A no-op under
    `config.fix_shared`."""
    if mode not in state.coupling_modes:
        raise DimensionError(f"Mode {mode} is not coupled.")
    if config.fix_shared:
        return state
    budget = config.mode_budgets(data.dims)[mode]
    update = truncate(solve_mode(state, data, r, mode, residuals), budget)
    state.factors[mode][:, r], _ = _normalized(update, r, f"tensor mode {mode}")
    return state


def update_uncoupled_mode(
    state: SolverState,
    data: CoupledData,
    config: SolverConfig,
    r: int,
    mode: int,
    is_weight_mode: bool,
    residuals: Optional[_Residuals] = None,
) -> SolverState:
    """Update of an uncoupled tensor mode. The weight mode also sets λ_r to the norm
    of the truncated update."""
    budget = config.mode_budgets(data.dims)[mode]
    update = truncate(solve_mode(state, data, r, mode, residuals), budget)
    state.factors[mode][:, r], norm = _normalized(update, r, f"tensor mode {mode}")
    if is_weight_mode:
        state.weights[r] = norm
    return state


def update_covariate(
    state: SolverState,
    data: CoupledData,
    config: SolverConfig,
    r: int,
    coupling_index: int,
    residuals: Optional[_Residuals] = None,
) -> SolverState:
    """ṽ = res_Mᵀ u_r, truncated; σ_r = ‖ṽ‖ and v_r = ṽ / σ_r. With a covariate mask,
    each entry of ṽ is divided by its column's observed weight Σ u_i²."""
    if residuals is None:
        residuals = _residuals(state, data, r)
    covariate = data.covariates[coupling_index]
    u = state.factors[state.coupling_modes[coupling_index]][:, r]
    update = residuals.matrices[coupling_index].T @ u
    if covariate.mask is not None:
        update = _safe_divide(update, covariate.mask.T @ (u * u))
    budget = config.covariate_budgets([c.width for c in data.covariates])[coupling_index]
    update = truncate(update, budget)
    v, sigma = _normalized(update, r, f"covariate {coupling_index}")
    state.covariate_factors[coupling_index][:, r] = v
    state.sigmas[coupling_index][r] = sigma
    return state


def _update_weight_least_squares(
    state: SolverState, config: SolverConfig, r: int, residuals: _Residuals
) -> None:
    """λ_r from a scalar least-squares solve, for models whose every tensor mode is
    coupled. A negative solution is absorbed by flipping the last mode's column and
    the covariate columns coupled to it; under `fix_shared` those columns are frozen,
    so λ_r keeps its previous value instead."""
    columns = [factor[:, r] for factor in state.factors]
    lam = rank1_least_squares(residuals.tensor, columns)
    if lam == 0.0:
        raise DegenerateComponentError(
            f"Weight of component {r} is zero.", rank_index=r, mode="weight"
        )
    if lam < 0.0 and config.fix_shared:
        logger.debug("Component %d: negative weight with frozen columns; λ kept.", r)
        return
    if lam < 0.0:
        last = len(state.factors) - 1
        state.factors[last][:, r] *= -1.0
        for j, mode in enumerate(state.coupling_modes):
            if mode == last:
                state.covariate_factors[j][:, r] *= -1.0
        lam = -lam
    state.weights[r] = lam


def sweep(state: SolverState, data: CoupledData, config: SolverConfig) -> SolverState:
    """One pass of the refinement loop over all components."""
    order = len(data.dims)
    coupled = sorted(set(state.coupling_modes))
    uncoupled = [mode for mode in range(order) if mode not in coupled]
    for r in range(state.rank):
        residuals = _residuals(state, data, r)
        for mode in coupled:
            update_coupled_mode(state, data, config, r, mode, residuals)
        for mode in uncoupled:
            update_uncoupled_mode(
                state, data, config, r, mode, mode == uncoupled[-1], residuals
            )
        if not uncoupled:
            _update_weight_least_squares(state, config, r, residuals)
        for j in range(len(data.covariates)):
            update_covariate(state, data, config, r, j, residuals)
    return state


def objective(data: CoupledData, model: ModelLike) -> float:
    """‖P_Ω(T − T̂)‖²_F + Σ_j ‖P_{Ω_M}(M_j − M̂_j)‖²_F."""
    state = _as_state(model)
    cp = CPFactors(weights=state.weights, factors=tuple(state.factors))
    misfit = data.tensor.values - reconstruct_at(cp, data.tensor.coords)
    total = float(misfit @ misfit)
    for j, covariate in enumerate(data.covariates):
        fitted = covariate_product(
            state.factors[covariate.mode],
            CovariateFactors(
                mode=covariate.mode,
                weights=state.sigmas[j],
                factor=state.covariate_factors[j],
            ),
        )
        diff = covariate.observed(covariate.values - fitted)
        total += float(np.sum(diff * diff))
    return total


def _check_conformity(data: CoupledData, config: SolverConfig, init: CoupledModel) -> None:
    if init.dims != data.dims:
        raise DimensionError(f"Initialization dims {init.dims} vs data dims {data.dims}.")
    if init.rank != config.rank:
        raise DimensionError(
            f"Initialization has rank {init.rank}, config asks for {config.rank}."
        )
    if len(init.couplings) != len(data.covariates):
        raise DimensionError(
            f"Initialization has {len(init.couplings)} couplings, data has"
            f" {len(data.covariates)} covariates."
        )
    for j, (coupling, covariate) in enumerate(zip(init.couplings, data.covariates)):
        if coupling.mode != covariate.mode or coupling.width != covariate.width:
            raise DimensionError(
                f"Coupling {j}: initialization (mode {coupling.mode}, width"
                f" {coupling.width}) vs data (mode {covariate.mode}, width"
                f" {covariate.width})."
            )
    config.mode_budgets(data.dims)
    config.covariate_budgets([c.width for c in data.covariates])


def _relative_change(old: Sequence[np.ndarray], new: Sequence[np.ndarray]) -> float:
    total = 0.0
    for a_old, a_new in zip(old, new):
        old_norm = float(np.linalg.norm(a_old))
        diff = float(np.linalg.norm(a_old - a_new))
        if old_norm == 0.0:
            total += 0.0 if diff == 0.0 else math.inf
        else:
            total += diff / old_norm
    return total


def _fit_once(
    data: CoupledData, config: SolverConfig, start: CoupledModel, restart_index: int
) -> FitResult:
    state = SolverState.from_model(start)
    trace = [objective(data, state)]
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        previous = [f.copy() for f in state.factors]
        sweep(state, data, config)
        trace.append(objective(data, state))
        change = _relative_change(previous, state.factors)
        logger.debug(
            "restart %d sweep %d: objective %.6e, change %.3e",
            restart_index,
            iterations,
            trace[-1],
            change,
        )
        if change < config.tol:
            converged = True
            break
    return FitResult(
        model=state.to_model(),
        objective_trace=tuple(trace),
        iterations=iterations,
        converged=converged,
        restart_index=restart_index,
        seed=config.seed,
    )


def fit(
    data: CoupledData,
    config: SolverConfig,
    init: CoupledModel,
    init_config: Optional[InitConfig] = None,
) -> FitResult:
    """Run the solver from `init` and from the `config.restarts - 1` further starts of
    `restart_start`; return the restart with the smallest final objective (ties:
    lowest restart index)."""
    _check_conformity(data, config, init)
    if init_config is None:
        init_config = InitConfig()
    frozen_modes = tuple(sorted({c.mode for c in init.couplings})) if config.fix_shared else ()

    results: List[FitResult] = []
    for restart_index in range(config.restarts):
        try:
            start = restart_start(
                data,
                init,
                dataclasses.replace(init_config, seed=config.seed),
                restart_index,
                frozen_modes,
            )
            result = _fit_once(data, config, start, restart_index)
        except DegenerateComponentError as e:
            logger.warning("Restart %d aborted: %s", restart_index, e)
            continue
        logger.info(
            "Restart %d: objective %.6e after %d sweeps (%s).",
            restart_index,
            result.objective,
            result.iterations,
            "converged" if result.converged else "not converged",
        )
        results.append(result)

    if len(results) == 0:
        raise AllRestartsDegenerateError(
            f"All {config.restarts} restarts produced a degenerate component."
        )
    return min(results, key=lambda result: (result.objective, result.restart_index))


def complete(model: CoupledModel, coords: np.ndarray) -> np.ndarray:
    """Values of the recovered tensor at an (n, K) array of coordinates."""
    return reconstruct_at(model.cp, coords)
