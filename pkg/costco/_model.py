"""Coupled CP factor models, covariate reconstruction, alignment and recovery
metrics."""

import dataclasses
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ._errors import DimensionError
from ._tensors import Dims, ObservedTensor, frobenius_norm, reconstruct, reconstruct_at


def _as_matrix(x: np.ndarray, rows: Optional[int] = None) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    if x.ndim == 1 and x.shape[0] == 0 and rows is not None:
        x = x.reshape(rows, 0)
    if x.ndim != 2:
        raise DimensionError(f"Expected a factor matrix, got shape {x.shape}.")
    return x


@dataclasses.dataclass(frozen=True, eq=False)
class CPFactors:
    """Rank-R CP model. Column r of `factors[k]` is the unit-norm mode-k vector of
    component r; `weights[r]` is its positive scale."""

    weights: np.ndarray
    factors: Tuple[np.ndarray, ...]

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        factors = tuple(_as_matrix(f) for f in self.factors)
        if len(factors) < 2:
            raise DimensionError("A CP model needs at least two modes.")
        for mode, factor in enumerate(factors):
            if factor.shape[1] != weights.shape[0]:
                raise DimensionError(
                    f"Mode {mode} factor has {factor.shape[1]} columns but there are"
                    f" {weights.shape[0]} weights."
                )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "factors", factors)

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    @property
    def dims(self) -> Dims:
        return tuple(int(f.shape[0]) for f in self.factors)

    @staticmethod
    def empty(dims: Sequence[int]) -> "CPFactors":
        return CPFactors(
            weights=np.zeros(0), factors=tuple(np.zeros((n, 0)) for n in dims)
        )


@dataclasses.dataclass(frozen=True, eq=False)
class CovariateFactors:
    """Matrix side of one coupling: M ≈ Σ_r σ_r u_r ⊗ v_r, where u_r is the coupled
    tensor mode's column."""

    mode: int
    weights: np.ndarray
    factor: np.ndarray

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        factor = _as_matrix(self.factor)
        if factor.shape[1] != weights.shape[0]:
            raise DimensionError(
                f"Covariate factor has {factor.shape[1]} columns but there are"
                f" {weights.shape[0]} weights."
            )
        object.__setattr__(self, "mode", int(self.mode))
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "factor", factor)

    @property
    def width(self) -> int:
        return int(self.factor.shape[0])


@dataclasses.dataclass(frozen=True)
class CouplingSpec:
    """Which tensor modes carry covariates, and how wide each covariate is. Entries
    are ordered; one mode may appear more than once."""

    couplings: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        couplings = tuple((int(m), int(w)) for m, w in self.couplings)
        for mode, width in couplings:
            if mode < 0 or width < 1:
                raise DimensionError(f"Invalid coupling (mode={mode}, width={width}).")
        object.__setattr__(self, "couplings", couplings)

    @property
    def coupled_modes(self) -> Tuple[int, ...]:
        return tuple(sorted({mode for mode, _ in self.couplings}))

    def __len__(self) -> int:
        return len(self.couplings)


@dataclasses.dataclass(frozen=True, eq=False)
class CoupledModel:
    """CP factors plus the matrix weights and covariate factors of each coupling."""

    cp: CPFactors
    couplings: Tuple[CovariateFactors, ...] = ()

    def __post_init__(self) -> None:
        couplings = tuple(self.couplings)
        for coupling in couplings:
            if not 0 <= coupling.mode < len(self.cp.factors):
                raise DimensionError(f"Coupling on nonexistent mode {coupling.mode}.")
            if coupling.weights.shape[0] != self.cp.rank:
                raise DimensionError(
                    f"Coupling on mode {coupling.mode} has rank"
                    f" {coupling.weights.shape[0]}, model has rank {self.cp.rank}."
                )
        object.__setattr__(self, "couplings", couplings)

    @property
    def rank(self) -> int:
        return self.cp.rank

    @property
    def dims(self) -> Dims:
        return self.cp.dims

    @property
    def coupling_spec(self) -> CouplingSpec:
        return CouplingSpec(tuple((c.mode, c.width) for c in self.couplings))

    def without_couplings(self) -> "CoupledModel":
        return CoupledModel(cp=self.cp)


def covariate_product(u: np.ndarray, coupling: CovariateFactors) -> np.ndarray:
    """Σ_r σ_r · u_r ⊗ v_r for explicit mode columns `u`."""
    return (u * coupling.weights[None, :]) @ coupling.factor.T


def reconstruct_covariate(model: CoupledModel, mode: int, which: int = 0) -> np.ndarray:
    """Dense Σ_r σ_r · u_r ⊗ v_r for a coupled mode. `which` picks among several
    couplings on the same mode, in model order."""
    on_mode = [c for c in model.couplings if c.mode == mode]
    if not 0 <= which < len(on_mode):
        raise DimensionError(
            f"Mode {mode} has {len(on_mode)} couplings; requested coupling {which}."
        )
    return covariate_product(model.cp.factors[mode], on_mode[which])


def _check_comparable(est: CoupledModel, truth: CoupledModel) -> None:
    if est.rank != truth.rank:
        raise DimensionError(f"Rank mismatch: {est.rank} vs {truth.rank}.")
    if est.dims != truth.dims:
        raise DimensionError(f"Dims mismatch: {est.dims} vs {truth.dims}.")


def _greedy_permutation(scores: np.ndarray) -> np.ndarray:
    """perm[m] is the estimated column matched to truth column m. Picks the best
    remaining pair each round; ties go to the lowest truth index, then the lowest
    estimated index."""
    rank = scores.shape[0]
    perm = np.full(rank, -1, dtype=np.int64)
    free_est = set(range(rank))
    free_truth = set(range(rank))
    for _ in range(rank):
        best: Optional[Tuple[int, int]] = None
        for m in sorted(free_truth):
            for r in sorted(free_est):
                if best is None or scores[r, m] > scores[best[0], best[1]]:
                    best = (r, m)
        assert best is not None
        perm[best[1]] = best[0]
        free_est.remove(best[0])
        free_truth.remove(best[1])
    return perm


def align(est: CoupledModel, truth: CoupledModel) -> CoupledModel:
    """Permute and sign-flip the columns of `est` to match `truth`.

    One global permutation (greedy on Σ_modes |⟨û_r, u*_m⟩|) is applied to every part of
    the model; then each mode's and each covariate's columns are flipped wherever their
    inner product with the truth column is negative. Weights are carried along."""
    _check_comparable(est, truth)
    if est.rank == 0:
        return est

    scores = sum(
        np.abs(e.T @ t) for e, t in zip(est.cp.factors, truth.cp.factors)
    )
    perm = _greedy_permutation(np.asarray(scores))

    def flip_to(x: np.ndarray, target: np.ndarray) -> np.ndarray:
        signs = np.where(np.sum(x * target, axis=0) < 0.0, -1.0, 1.0)
        return x * signs[None, :]

    factors = tuple(
        flip_to(e[:, perm], t) for e, t in zip(est.cp.factors, truth.cp.factors)
    )
    couplings: List[CovariateFactors] = []
    for index, coupling in enumerate(est.couplings):
        factor = coupling.factor[:, perm]
        if index < len(truth.couplings) and truth.couplings[index].width == coupling.width:
            factor = flip_to(factor, truth.couplings[index].factor)
        couplings.append(
            CovariateFactors(
                mode=coupling.mode, weights=coupling.weights[perm], factor=factor
            )
        )
    return CoupledModel(
        cp=CPFactors(weights=est.cp.weights[perm], factors=factors),
        couplings=tuple(couplings),
    )


@dataclasses.dataclass(frozen=True)
class RecoveryReport:
    """Normalized Frobenius recovery errors of an estimate against the truth."""

    tensor_error: float
    component_errors: Tuple[float, ...]  # One per tensor mode.
    weight_error: float
    covariate_errors: Tuple[float, ...] = ()  # One per coupling present in both.
    sigma_errors: Tuple[float, ...] = ()

    def as_rows(self) -> List[Tuple[str, Optional[int], float]]:
        """(metric, index, value) triples, in the CSV order used by `evaluate`."""
        rows: List[Tuple[str, Optional[int], float]] = [
            ("tensor_error", None, self.tensor_error)
        ]
        rows.extend(("component_error", k, e) for k, e in enumerate(self.component_errors))
        rows.append(("weight_error", None, self.weight_error))
        rows.extend(("covariate_error", j, e) for j, e in enumerate(self.covariate_errors))
        rows.extend(("sigma_error", j, e) for j, e in enumerate(self.sigma_errors))
        return rows

    def as_dict(self) -> Dict[str, float]:
        """Flat metric names, e.g. `component_error_0`."""
        return {
            name if index is None else f"{name}_{index}": value
            for name, index, value in self.as_rows()
        }


def _relative(diff: np.ndarray, reference: np.ndarray) -> float:
    denominator = float(np.linalg.norm(reference.ravel()))
    numerator = float(np.linalg.norm(diff.ravel()))
    if denominator == 0.0:
        return 0.0 if numerator == 0.0 else float("inf")
    return numerator / denominator


def metrics(
    est: CoupledModel,
    truth: CoupledModel,
    truth_tensor: Optional[np.ndarray] = None,
) -> RecoveryReport:
    """Tensor, per-mode component, and weight errors after aligning `est` to `truth`.

    `truth_tensor` defaults to `reconstruct(truth.cp)`."""
    _check_comparable(est, truth)
    if truth_tensor is None:
        truth_tensor = reconstruct(truth.cp)
    if tuple(truth_tensor.shape) != truth.dims:
        raise DimensionError(
            f"Truth tensor has shape {truth_tensor.shape}, expected {truth.dims}."
        )
    aligned = align(est, truth)

    tensor_error = _relative(reconstruct(aligned.cp) - truth_tensor, truth_tensor)
    component_errors = tuple(
        _relative(e - t, t) for e, t in zip(aligned.cp.factors, truth.cp.factors)
    )
    weight_error = _relative(aligned.cp.weights - truth.cp.weights, truth.cp.weights)

    covariate_errors = []
    sigma_errors = []
    for e, t in zip(aligned.couplings, truth.couplings):
        if e.mode != t.mode or e.width != t.width:
            continue
        covariate_errors.append(_relative(e.factor - t.factor, t.factor))
        sigma_errors.append(_relative(e.weights - t.weights, t.weights))

    return RecoveryReport(
        tensor_error=tensor_error,
        component_errors=component_errors,
        weight_error=weight_error,
        covariate_errors=tuple(covariate_errors),
        sigma_errors=tuple(sigma_errors),
    )


def holdout_error(model: CoupledModel, test: ObservedTensor) -> float:
    """‖P_test(T − T̂)‖_F / ‖P_test(T)‖_F over held-out entries."""
    if test.dims != model.dims:
        raise DimensionError(f"Test tensor dims {test.dims} vs model dims {model.dims}.")
    predicted = reconstruct_at(model.cp, test.coords)
    denominator = frobenius_norm(test)
    if denominator == 0.0:
        raise DimensionError("Held-out entries are empty or all zero.")
    return float(np.linalg.norm(test.values - predicted)) / denominator
