"""Dense and coordinate-observed tensor kernels.

Dense tensors and matrices are plain float64 `np.ndarray`s; the shape of a dense
tensor is its dims. Observed tensors store their revealed entries as a sorted
coordinate list, which is all the ALS updates ever touch.
"""

import dataclasses
from typing import TYPE_CHECKING, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ._errors import DimensionError

if TYPE_CHECKING:
    from ._model import CPFactors

Dims = Tuple[int, ...]


def _check_dims(dims: Sequence[int]) -> Dims:
    dims = tuple(int(n) for n in dims)
    if len(dims) < 2:
        raise DimensionError(f"Tensors need at least two modes, got dims {dims}.")
    if any(n < 1 for n in dims):
        raise DimensionError(f"Every mode size must be positive, got dims {dims}.")
    return dims


@dataclasses.dataclass(frozen=True, eq=False)
class ObservedTensor:
    """Revealed entries of an order-K tensor, P_Ω(T).

    `coords` is an (nnz, K) array of 0-based coordinates sorted lexicographically,
    `values` the matching (nnz,) entry values. Use `ObservedTensor.from_entries()` to
    build one from unsorted input."""

    dims: Dims
    coords: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        dims = _check_dims(self.dims)
        coords = np.asarray(self.coords, dtype=np.int64).reshape(-1, len(dims))
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if coords.shape[0] != values.shape[0]:
            raise DimensionError(
                f"Got {coords.shape[0]} coordinates but {values.shape[0]} values."
            )
        _check_in_range(dims, coords)

        order = np.lexsort(coords.T[::-1]) if coords.shape[0] > 0 else np.arange(0)
        coords = coords[order]
        values = values[order]
        if coords.shape[0] > 1:
            repeated = np.all(coords[1:] == coords[:-1], axis=1)
            if np.any(repeated):
                first = int(np.flatnonzero(repeated)[0])
                raise DimensionError(
                    f"Duplicate coordinate {tuple(coords[first + 1].tolist())}."
                )

        coords.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "values", values)

    @staticmethod
    def from_entries(
        dims: Sequence[int],
        coords: Union[np.ndarray, Sequence[Sequence[int]]],
        values: Union[np.ndarray, Sequence[float]],
    ) -> "ObservedTensor":
        return ObservedTensor(dims=tuple(dims), coords=np.asarray(coords), values=np.asarray(values))

    @staticmethod
    def empty(dims: Sequence[int]) -> "ObservedTensor":
        return ObservedTensor(
            dims=tuple(dims),
            coords=np.zeros((0, len(dims)), dtype=np.int64),
            values=np.zeros(0),
        )

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def nnz(self) -> int:
        return int(self.values.shape[0])

    def with_values(self, values: np.ndarray) -> "ObservedTensor":
        """Same coordinates, new values. Skips re-sorting."""
        out = object.__new__(ObservedTensor)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.shape[0] != self.nnz:
            raise DimensionError(f"Expected {self.nnz} values, got {values.shape[0]}.")
        values.setflags(write=False)
        object.__setattr__(out, "dims", self.dims)
        object.__setattr__(out, "coords", self.coords)
        object.__setattr__(out, "values", values)
        return out

    def to_dense(self) -> np.ndarray:
        """Zero-filled dense tensor."""
        out = np.zeros(self.dims)
        out[tuple(self.coords.T)] = self.values
        return out

    def mask(self) -> np.ndarray:
        out = np.zeros(self.dims, dtype=bool)
        out[tuple(self.coords.T)] = True
        return out


@dataclasses.dataclass(frozen=True, eq=False)
class Covariate:
    """Covariate matrix coupled to one tensor mode.

    `values` has one row per index of the coupled mode. When `mask` is set, only the
    entries where it is `True` are observed (Ω_M); the others are ignored."""

    mode: int
    values: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionError(
                f"Covariate matrices must be 2-D and nonempty, got shape {values.shape}."
            )
        mask = self.mask
        if mask is not None:
            mask = np.asarray(mask, dtype=bool)
            if mask.shape != values.shape:
                raise DimensionError(
                    f"Covariate mask shape {mask.shape} doesn't match values"
                    f" {values.shape}."
                )
            values = np.where(mask, values, 0.0)
        object.__setattr__(self, "mode", int(self.mode))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    @property
    def width(self) -> int:
        return int(self.values.shape[1])

    def observed(self, dense: np.ndarray) -> np.ndarray:
        """P_{Ω_M}(dense)."""
        if self.mask is None:
            return dense
        return np.where(self.mask, dense, 0.0)


@dataclasses.dataclass(frozen=True, eq=False)
class CoupledData:
    """An observed tensor plus the covariate matrices coupled to its modes."""

    tensor: ObservedTensor
    covariates: Tuple[Covariate, ...] = ()

    def __post_init__(self) -> None:
        covariates = tuple(self.covariates)
        for covariate in covariates:
            if not 0 <= covariate.mode < self.tensor.order:
                raise DimensionError(
                    f"Covariate coupled to mode {covariate.mode}, but the tensor has"
                    f" {self.tensor.order} modes."
                )
            if covariate.values.shape[0] != self.tensor.dims[covariate.mode]:
                raise DimensionError(
                    f"Covariate for mode {covariate.mode} has"
                    f" {covariate.values.shape[0]} rows, expected"
                    f" {self.tensor.dims[covariate.mode]}."
                )
        object.__setattr__(self, "covariates", covariates)

    @property
    def dims(self) -> Dims:
        return self.tensor.dims

    def without_covariates(self) -> "CoupledData":
        return CoupledData(tensor=self.tensor)


def _check_in_range(dims: Dims, coords: np.ndarray) -> None:
    if coords.shape[0] == 0:
        return
    bad = np.any((coords < 0) | (coords >= np.asarray(dims)), axis=1)
    if np.any(bad):
        first = coords[int(np.flatnonzero(bad)[0])]
        raise DimensionError(
            f"Coordinate {tuple(first.tolist())} is out of range for dims {dims}."
        )


def _check_fixed(
    dims: Dims, fixed: Mapping[int, np.ndarray], free_mode: int
) -> None:
    if not 0 <= free_mode < len(dims):
        raise DimensionError(f"Mode {free_mode} out of range for dims {dims}.")
    expected = set(range(len(dims))) - {free_mode}
    if set(fixed.keys()) != expected:
        raise DimensionError(
            f"Expected fixed vectors for modes {sorted(expected)}, got"
            f" {sorted(fixed.keys())}."
        )
    for mode, vector in fixed.items():
        if np.shape(vector) != (dims[mode],):
            raise DimensionError(
                f"Vector for mode {mode} has shape {np.shape(vector)}, expected"
                f" ({dims[mode]},)."
            )


def reconstruct(model: "CPFactors") -> np.ndarray:
    """Dense tensor Σ_r λ_r · u¹_r ⊗ … ⊗ u^K_r."""
    factors = model.factors
    out = factors[0] * model.weights[None, :]
    for factor in factors[1:]:
        out = out[..., None, :] * factor.reshape((1,) * (out.ndim - 1) + factor.shape)
    return out.sum(axis=-1)


def reconstruct_at(model: "CPFactors", coords: np.ndarray) -> np.ndarray:
    """Entries of `reconstruct(model)` at an (n, K) array of coordinates, without
    densifying."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, len(model.factors))
    _check_in_range(model.dims, coords)
    rows = np.ones((coords.shape[0], model.rank))
    for mode, factor in enumerate(model.factors):
        rows *= factor[coords[:, mode], :]
    return rows @ model.weights


def project(coords: np.ndarray, dense: np.ndarray) -> ObservedTensor:
    """P_Ω: the entries of `dense` at the given coordinates."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, dense.ndim)
    _check_in_range(tuple(dense.shape), coords)
    return ObservedTensor(
        dims=tuple(dense.shape), coords=coords, values=dense[tuple(coords.T)]
    )


def _fixed_products(
    coords: np.ndarray, fixed: Mapping[int, np.ndarray], free_mode: int, power: int
) -> np.ndarray:
    out = np.ones(coords.shape[0])
    for mode in sorted(fixed.keys()):
        if mode == free_mode:
            continue
        gathered = fixed[mode][coords[:, mode]]
        out *= gathered if power == 1 else gathered**power
    return out


def masked_contract(
    obs: ObservedTensor, fixed: Mapping[int, np.ndarray], free_mode: int
) -> np.ndarray:
    """Component i is the sum, over observed entries whose free-mode index is i, of the
    entry value times the fixed vectors evaluated at the entry's other coordinates."""
    _check_fixed(obs.dims, fixed, free_mode)
    weights = obs.values * _fixed_products(obs.coords, fixed, free_mode, power=1)
    return np.bincount(
        obs.coords[:, free_mode], weights=weights, minlength=obs.dims[free_mode]
    ).astype(np.float64)


def masked_weight(
    obs: ObservedTensor, fixed: Mapping[int, np.ndarray], free_mode: int
) -> np.ndarray:
    """Like `masked_contract()`, but sums products of squared fixed-vector entries and
    ignores the observed values. Element-wise nonnegative."""
    _check_fixed(obs.dims, fixed, free_mode)
    weights = _fixed_products(obs.coords, fixed, free_mode, power=2)
    return np.bincount(
        obs.coords[:, free_mode], weights=weights, minlength=obs.dims[free_mode]
    ).astype(np.float64)


def dense_contract(
    t: np.ndarray, fixed: Mapping[int, np.ndarray], free_mode: int
) -> np.ndarray:
    """Tensor-vector products along every mode but `free_mode`."""
    _check_fixed(tuple(t.shape), fixed, free_mode)
    out = np.moveaxis(t, free_mode, 0)
    # Remaining axes are the other modes in ascending order; contract from the back.
    for mode in sorted(fixed.keys(), reverse=True):
        out = out @ fixed[mode]
    return np.asarray(out, dtype=np.float64)


def rank1_least_squares(obs: ObservedTensor, vectors: Sequence[np.ndarray]) -> float:
    """argmin_λ ‖P_Ω(T) − λ·P_Ω(u¹ ⊗ … ⊗ u^K)‖_F. Zero when the rank-1 term vanishes
    on every observed coordinate."""
    if len(vectors) != obs.order:
        raise DimensionError(f"Expected {obs.order} vectors, got {len(vectors)}.")
    products = np.ones(obs.nnz)
    for mode, vector in enumerate(vectors):
        products *= vector[obs.coords[:, mode]]
    denominator = float(products @ products)
    if denominator == 0.0:
        return 0.0
    return float(obs.values @ products) / denominator


def frobenius_norm(x: Union[np.ndarray, ObservedTensor, Covariate]) -> float:
    """Square root of the sum of squared present values."""
    if isinstance(x, ObservedTensor):
        values = x.values
    elif isinstance(x, Covariate):
        values = x.values if x.mask is None else x.values[x.mask]
    else:
        values = np.asarray(x)
    return float(np.linalg.norm(values.ravel()))


def split_observed(
    obs: ObservedTensor, test_fraction: float, rng: np.random.Generator
) -> Tuple[ObservedTensor, ObservedTensor]:
    """Randomly partition observed entries into (train, test)."""
    if not 0.0 <= test_fraction <= 1.0:
        raise DimensionError(f"Test fraction must lie in [0, 1], got {test_fraction}.")
    n_test = int(round(test_fraction * obs.nnz))
    is_test = np.zeros(obs.nnz, dtype=bool)
    is_test[rng.permutation(obs.nnz)[:n_test]] = True
    train = ObservedTensor(obs.dims, obs.coords[~is_test], obs.values[~is_test])
    test = ObservedTensor(obs.dims, obs.coords[is_test], obs.values[is_test])
    return train, test
