"""Starting values for the solver.

Coupled modes start from the leading singular vectors of their covariate matrices;
uncoupled modes and the tensor weights come from a robust tensor power method run on
the zero-filled observed tensor, with the coupled columns held fixed. Restarts perturb
the result.
"""

import dataclasses
import logging
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from typing_extensions import Literal

from ._errors import ConvergenceError, DegenerateComponentError, DimensionError
from ._model import CoupledModel, CouplingSpec, CovariateFactors, CPFactors
from ._random import StreamId, make_rng
from ._tensors import CoupledData, Covariate, dense_contract, reconstruct

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class InitConfig:
    """Settings for SVD/RTPM initialization and restart perturbations."""

    rtpm_starts: int = 30  # Random starts per component; the largest |T(u, …)| wins.
    rtpm_iters: int = 50  # Alternating rank-1 power rounds per start.

    # How covariate SVDs are computed: LAPACK via numpy, or power iteration with
    # deflation.
    svd_method: Literal["lapack", "power"] = "lapack"
    svd_power_iters: int = 100  # Iteration cap per singular pair (power method only).
    svd_tol: float = 1e-10  # Convergence tolerance of the power method.

    restart_jitter: float = 0.1  # Relative Gaussian perturbation scale for restarts.
    # RTPM starts per component when an odd-numbered restart re-derives its start from
    # the tensor alone.
    restart_rtpm_starts: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("rtpm_starts", "rtpm_iters", "svd_power_iters", "restart_rtpm_starts"):
            if getattr(self, name) < 1:
                raise DimensionError(f"{name} must be positive, got {getattr(self, name)}.")
        for name in ("svd_tol", "restart_jitter"):
            if not getattr(self, name) > 0.0:
                raise DimensionError(f"{name} must be positive, got {getattr(self, name)}.")
        if self.svd_method not in ("lapack", "power"):
            raise DimensionError(f"Unknown svd_method {self.svd_method!r}.")


def _fix_signs(u: np.ndarray, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Make each u-column's largest-magnitude entry positive; v compensates."""
    if u.shape[1] == 0:
        return u, v
    pivots = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivots, np.arange(u.shape[1])])
    signs[signs == 0.0] = 1.0
    return u * signs[None, :], v * signs[None, :]


def _power_svd(
    m: np.ndarray, rank: int, config: InitConfig
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    rng = make_rng(config.seed, "svd")
    residual = m.copy()
    rows, cols = m.shape
    u_out = np.zeros((rows, rank))
    s_out = np.zeros(rank)
    v_out = np.zeros((cols, rank))
    for r in range(rank):
        v = rng.standard_normal(cols)
        v /= np.linalg.norm(v)
        for _ in range(config.svd_power_iters):
            u = residual @ v
            u_norm = np.linalg.norm(u)
            if u_norm == 0.0:
                break
            u /= u_norm
            v_next = residual.T @ u
            sigma = np.linalg.norm(v_next)
            v_next /= sigma
            if np.linalg.norm(v_next - v) < config.svd_tol:
                v = v_next
                break
            v = v_next
        else:
            raise ConvergenceError(
                f"Power iteration for singular pair {r} did not converge within"
                f" {config.svd_power_iters} iterations."
            )
        u = residual @ v
        sigma = float(np.linalg.norm(u))
        if sigma > 0.0:
            u /= sigma
        u_out[:, r], s_out[r], v_out[:, r] = u, sigma, v
        residual -= sigma * np.outer(u, v)
    return u_out, s_out, v_out


def svd_init(
    m: np.ndarray, rank: int, config: Optional[InitConfig] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-`rank` singular triplets (u columns, σ, v columns) of a covariate matrix,
    with σ nonincreasing and each u column's largest-magnitude entry positive."""
    if config is None:
        config = InitConfig()
    m = np.asarray(m, dtype=np.float64)
    if not 0 <= rank <= min(m.shape):
        raise DimensionError(f"Rank {rank} exceeds the matrix shape {m.shape}.")

    if config.svd_method == "lapack":
        u, s, vt = np.linalg.svd(m, full_matrices=False)
        u, s, v = u[:, :rank], s[:rank], vt[:rank, :].T
    else:
        u, s, v = _power_svd(m, rank, config)

    zero = np.flatnonzero(s <= 0.0)
    if zero.shape[0] > 0:
        raise DegenerateComponentError(
            f"Covariate matrix has a zero singular value at component {zero[0]}.",
            rank_index=int(zero[0]),
            mode="svd",
        )
    u, v = _fix_signs(u, v)
    return u, s.copy(), v


def rtpm_init(
    tensor: np.ndarray,
    rank: int,
    config: Optional[InitConfig] = None,
    fixed: Optional[Mapping[int, np.ndarray]] = None,
    stream: Tuple[StreamId, ...] = (),
) -> Tuple[np.ndarray, Dict[int, np.ndarray]]:
    """Robust tensor power method with deflation on a dense (zero-filled) tensor.

    Modes listed in `fixed` keep the given columns; the others are found by
    best-of-`rtpm_starts` alternating rank-1 power iterations, drawn from the
    `(seed, "rtpm", *stream, r)` streams. Returns the positive weights and the
    unit-norm columns of the free modes."""
    if config is None:
        config = InitConfig()
    if fixed is None:
        fixed = {}
    if rank < 1:
        raise DimensionError(f"RTPM needs rank >= 1, got {rank}.")
    dims = tuple(tensor.shape)
    free = [mode for mode in range(len(dims)) if mode not in fixed]
    if len(free) == 0:
        raise DimensionError("RTPM needs at least one mode that isn't fixed.")
    for mode, columns in fixed.items():
        if columns.shape != (dims[mode], rank):
            raise DimensionError(
                f"Fixed columns for mode {mode} have shape {columns.shape}, expected"
                f" {(dims[mode], rank)}."
            )

    deflated = np.array(tensor, dtype=np.float64)
    weights = np.zeros(rank)
    columns = {mode: np.zeros((dims[mode], rank)) for mode in free}

    def others(vectors: Dict[int, np.ndarray], skip: int) -> Dict[int, np.ndarray]:
        return {mode: vec for mode, vec in vectors.items() if mode != skip}

    for r in range(rank):
        rng = make_rng(config.seed, "rtpm", *stream, r)
        best_value = 0.0
        best: Optional[Dict[int, np.ndarray]] = None
        for start in range(config.rtpm_starts):
            vectors = {mode: np.asarray(fixed[mode][:, r], dtype=np.float64) for mode in fixed}
            for mode in free:
                x = rng.standard_normal(dims[mode])
                vectors[mode] = x / np.linalg.norm(x)

            collapsed = False
            for _ in range(config.rtpm_iters):
                change = 0.0
                for mode in free:
                    x = dense_contract(deflated, others(vectors, mode), mode)
                    norm = float(np.linalg.norm(x))
                    if norm == 0.0:
                        collapsed = True
                        break
                    x /= norm
                    change += float(np.linalg.norm(x - vectors[mode]))
                    vectors[mode] = x
                if collapsed or change < 1e-13:
                    break
            if collapsed:
                continue

            value = float(
                dense_contract(deflated, others(vectors, free[0]), free[0])
                @ vectors[free[0]]
            )
            logger.debug("RTPM component %d start %d: |T(u…)| = %.6e", r, start, abs(value))
            if abs(value) > abs(best_value):
                best_value, best = value, vectors

        if best is None or best_value == 0.0:
            raise DegenerateComponentError(
                f"Every RTPM start collapsed for component {r}.", rank_index=r, mode="rtpm"
            )
        if best_value < 0.0:
            best[free[0]] = -best[free[0]]
            best_value = -best_value

        weights[r] = best_value
        for mode in free:
            columns[mode][:, r] = best[mode]
        rank1 = CPFactors(
            weights=np.array([best_value]),
            factors=tuple(best[mode][:, None] for mode in range(len(dims))),
        )
        deflated -= reconstruct(rank1)
    return weights, columns


def _least_squares_weights(
    data: CoupledData, factors: List[np.ndarray], covariate_factors: List[np.ndarray]
) -> np.ndarray:
    """Joint least-squares tensor weights for fixed columns. Negative weights are
    absorbed into the last mode's column and the covariates coupled to it."""
    rank = factors[0].shape[1]
    design = np.ones((data.tensor.nnz, rank))
    for mode, factor in enumerate(factors):
        design *= factor[data.tensor.coords[:, mode], :]
    weights = np.linalg.lstsq(design, data.tensor.values, rcond=None)[0]
    last = len(factors) - 1
    for r in np.flatnonzero(weights < 0.0):
        weights[r] = -weights[r]
        factors[last][:, r] *= -1.0
        for j, covariate in enumerate(data.covariates):
            if covariate.mode == last:
                covariate_factors[j][:, r] *= -1.0
    zero = np.flatnonzero(weights == 0.0)
    if zero.shape[0] > 0:
        raise DegenerateComponentError(
            f"Tensor weight of component {zero[0]} is zero.",
            rank_index=int(zero[0]),
            mode="weight",
        )
    return weights


def initialize(
    data: CoupledData,
    coupling: Optional[CouplingSpec],
    rank: int,
    config: Optional[InitConfig] = None,
    restart_index: int = 0,
) -> CoupledModel:
    """Initial coupled model for `data`.

    `coupling` selects the couplings to model: `None` uses every covariate in `data`,
    an empty spec ignores them all (the standalone tensor-completion ablation), and
    any other spec must match the data's covariates."""
    if config is None:
        config = InitConfig()
    if coupling is not None and len(coupling) == 0:
        data = data.without_covariates()
    elif coupling is not None:
        expected = tuple((c.mode, c.width) for c in data.covariates)
        if coupling.couplings != expected:
            raise DimensionError(
                f"Coupling spec {coupling.couplings} doesn't match the data's"
                f" covariates {expected}."
            )

    dims = data.dims
    factors: List[Optional[np.ndarray]] = [None] * len(dims)
    sigmas: List[np.ndarray] = []
    covariate_factors: List[np.ndarray] = []
    for covariate in data.covariates:
        shared = factors[covariate.mode]
        if shared is None:
            u, sigma, v = svd_init(covariate.values, rank, config)
            factors[covariate.mode] = u
        else:
            # Later couplings on the same mode project onto the columns already chosen.
            sigma, v = _project_covariate(covariate, shared)
        sigmas.append(sigma)
        covariate_factors.append(v)

    fixed = {mode: f for mode, f in enumerate(factors) if f is not None}
    if len(fixed) < len(dims):
        weights, free_columns = rtpm_init(data.tensor.to_dense(), rank, config, fixed)
        for mode, columns in free_columns.items():
            factors[mode] = columns
        full = [f for f in factors if f is not None]
    else:
        full = [f for f in factors if f is not None]
        weights = _least_squares_weights(data, full, covariate_factors)

    model = CoupledModel(
        cp=CPFactors(weights=weights, factors=tuple(full)),
        couplings=tuple(
            CovariateFactors(mode=c.mode, weights=s, factor=v)
            for c, s, v in zip(data.covariates, sigmas, covariate_factors)
        ),
    )
    return restart_start(data, model, config, restart_index)


def _jitter_columns(
    x: np.ndarray, jitter: float, rng: np.random.Generator
) -> np.ndarray:
    noise = rng.standard_normal(x.shape) * (jitter / np.sqrt(x.shape[0]))
    out = x + noise
    norms = np.linalg.norm(out, axis=0)
    norms[norms == 0.0] = 1.0
    return out / norms[None, :]


def _jitter_weights(
    w: np.ndarray, jitter: float, rng: np.random.Generator
) -> np.ndarray:
    return np.abs(w * (1.0 + jitter * rng.standard_normal(w.shape)))


def perturb(
    model: CoupledModel,
    jitter: float,
    rng: np.random.Generator,
    frozen_modes: Tuple[int, ...] = (),
) -> CoupledModel:
    """Restart perturbation: Gaussian jitter of relative scale `jitter` on every
    unit-norm column (then renormalized) and multiplicative jitter on every weight.
    Columns of `frozen_modes` are left untouched. No truncation is applied."""
    factors = tuple(
        f.copy() if mode in frozen_modes else _jitter_columns(f, jitter, rng)
        for mode, f in enumerate(model.cp.factors)
    )
    weights = _jitter_weights(model.cp.weights, jitter, rng)
    couplings = tuple(
        CovariateFactors(
            mode=c.mode,
            weights=_jitter_weights(c.weights, jitter, rng),
            factor=_jitter_columns(c.factor, jitter, rng),
        )
        for c in model.couplings
    )
    return CoupledModel(cp=CPFactors(weights=weights, factors=factors), couplings=couplings)


def _project_covariate(
    covariate: Covariate, u: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    projected = covariate.observed(covariate.values).T @ u
    sigma = np.linalg.norm(projected, axis=0)
    if np.any(sigma == 0.0):
        r = int(np.flatnonzero(sigma == 0.0)[0])
        raise DegenerateComponentError(
            f"Covariate on mode {covariate.mode} is orthogonal to component {r}.",
            rank_index=r,
            mode="svd",
        )
    return sigma, projected / sigma[None, :]


def tensor_start(
    data: CoupledData,
    init: CoupledModel,
    config: InitConfig,
    restart_index: int,
    frozen_modes: Tuple[int, ...] = (),
) -> CoupledModel:
    """Start derived from the observed tensor alone: RTPM on the zero-filled tensor,
    on the restart's own streams, for every mode outside `frozen_modes` (coupled modes
    included). Each covariate's σ and V are then projected from its matrix onto the
    new columns of its mode."""
    fixed = {mode: init.cp.factors[mode] for mode in frozen_modes}
    weights, columns = rtpm_init(
        data.tensor.to_dense(),
        init.rank,
        dataclasses.replace(config, rtpm_starts=config.restart_rtpm_starts),
        fixed,
        stream=("restart", restart_index),
    )
    factors = tuple(
        fixed[mode].copy() if mode in fixed else columns[mode]
        for mode in range(len(data.dims))
    )
    couplings = []
    for covariate, coupling in zip(data.covariates, init.couplings):
        if covariate.mode in fixed:
            couplings.append(coupling)
            continue
        sigma, v = _project_covariate(covariate, factors[covariate.mode])
        couplings.append(CovariateFactors(mode=covariate.mode, weights=sigma, factor=v))
    return CoupledModel(
        cp=CPFactors(weights=weights, factors=factors), couplings=tuple(couplings)
    )


def restart_start(
    data: CoupledData,
    init: CoupledModel,
    config: InitConfig,
    restart_index: int,
    frozen_modes: Tuple[int, ...] = (),
) -> CoupledModel:
    """Starting model of restart `restart_index`.

    Restart 0 is `init`. Odd restarts re-derive the start from the tensor
    (`tensor_start`), so they don't inherit the covariate SVD's rotation of the shared
    columns; even ones perturb `init`. With every mode frozen, or at rank 0, all restarts
    perturb."""
    if restart_index == 0:
        return init
    if restart_index % 2 == 1 and init.rank > 0 and len(frozen_modes) < len(data.dims):
        return tensor_start(data, init, config, restart_index, frozen_modes)
    return perturb(
        init,
        config.restart_jitter,
        make_rng(config.seed, "restart", restart_index),
        frozen_modes=frozen_modes,
    )
