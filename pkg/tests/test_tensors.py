import numpy as np
import pytest
from numpy.testing import assert_allclose

from costco import (
    Covariate,
    CoupledData,
    CPFactors,
    DimensionError,
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
from costco._random import make_rng
from costco._tensors import rank1_least_squares


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x)


def _random_cp(dims, rank, seed=0):
    rng = make_rng(seed, "test")
    factors = []
    for n in dims:
        x = rng.standard_normal((n, rank))
        factors.append(x / np.linalg.norm(x, axis=0)[None, :])
    return CPFactors(weights=np.abs(rng.standard_normal(rank)) + 1.0, factors=tuple(factors))


def test_observed_tensor_sorts_entries():
    obs = ObservedTensor.from_entries((2, 3), [[1, 0], [0, 2], [0, 1]], [1.0, 2.0, 3.0])
    assert obs.coords.tolist() == [[0, 1], [0, 2], [1, 0]]
    assert obs.values.tolist() == [3.0, 2.0, 1.0]
    assert obs.order == 2
    assert obs.nnz == 3


def test_observed_tensor_rejects_bad_input():
    with pytest.raises(DimensionError):
        ObservedTensor.from_entries((2, 2), [[0, 1], [0, 1]], [1.0, 2.0])
    with pytest.raises(DimensionError):
        ObservedTensor.from_entries((2, 2), [[0, 2]], [1.0])
    with pytest.raises(DimensionError):
        ObservedTensor.from_entries((2, 2), [[0, 1]], [1.0, 2.0])
    with pytest.raises(DimensionError):
        ObservedTensor.empty((4,))


def test_to_dense_and_mask():
    obs = ObservedTensor.from_entries((2, 2), [[0, 1], [1, 0]], [5.0, -1.0])
    assert obs.to_dense().tolist() == [[0.0, 5.0], [-1.0, 0.0]]
    assert obs.mask().tolist() == [[False, True], [True, False]]
    assert ObservedTensor.empty((3, 2)).to_dense().shape == (3, 2)


def test_with_values_keeps_coordinates():
    obs = ObservedTensor.from_entries((2, 2), [[1, 1], [0, 0]], [1.0, 2.0])
    other = obs.with_values([7.0, 8.0])
    assert other.coords.tolist() == [[0, 0], [1, 1]]
    assert other.values.tolist() == [7.0, 8.0]
    with pytest.raises(DimensionError):
        obs.with_values([1.0])


def test_reconstruct_matches_einsum():
    cp = _random_cp((3, 4, 5), rank=2)
    expected = np.einsum("r,ir,jr,kr->ijk", cp.weights, *cp.factors)
    assert_allclose(reconstruct(cp), expected, rtol=1e-12, atol=1e-14)


def test_reconstruct_at_matches_dense():
    cp = _random_cp((3, 4, 5), rank=3)
    coords = np.array([[0, 0, 0], [2, 3, 4], [1, 2, 0]])
    dense = reconstruct(cp)
    assert_allclose(reconstruct_at(cp, coords), dense[tuple(coords.T)], rtol=1e-12, atol=1e-14)
    with pytest.raises(DimensionError):
        reconstruct_at(cp, np.array([[3, 0, 0]]))


def test_project():
    dense = np.arange(12, dtype=np.float64).reshape(3, 4)
    obs = project(np.array([[2, 3], [0, 1]]), dense)
    assert obs.coords.tolist() == [[0, 1], [2, 3]]
    assert obs.values.tolist() == [1.0, 11.0]


def test_masked_contract_fully_observed_rank1():
    a, b, c = _unit([1.0, 2.0, 3.0]), _unit([1.0, -1.0]), _unit([0.5, 2.0, -1.0, 1.0])
    dense = 2.0 * np.einsum("i,j,k->ijk", a, b, c)
    obs = project(np.argwhere(np.ones(dense.shape, dtype=bool)), dense)

    fixed = {1: b, 2: c}
    assert_allclose(masked_contract(obs, fixed, 0), 2.0 * a, rtol=1e-12)
    assert_allclose(masked_contract(obs, fixed, 0), dense_contract(dense, fixed, 0), rtol=1e-12)
    # Squared unit vectors sum to one over a full slice.
    assert_allclose(masked_weight(obs, fixed, 0), np.ones(3), rtol=1e-12)


def test_masked_contract_ignores_unobserved_entries():
    obs = ObservedTensor.from_entries((2, 2), [[0, 0], [1, 1]], [3.0, 4.0])
    fixed = {1: np.array([2.0, 5.0])}
    assert masked_contract(obs, fixed, 0).tolist() == [6.0, 20.0]
    assert masked_weight(obs, fixed, 0).tolist() == [4.0, 25.0]
    with pytest.raises(DimensionError):
        masked_contract(obs, {0: np.ones(2)}, 0)


def test_rank1_least_squares():
    vectors = [np.array([1.0, 2.0]), np.array([3.0, -1.0, 1.0])]
    dense = 3.0 * np.outer(*vectors)
    obs = project(np.array([[0, 0], [1, 1], [1, 2]]), dense)
    assert rank1_least_squares(obs, vectors) == pytest.approx(3.0)
    assert rank1_least_squares(obs, [np.zeros(2), np.ones(3)]) == 0.0


def test_frobenius_norm():
    assert frobenius_norm(np.array([[3.0, 4.0]])) == pytest.approx(5.0)
    obs = ObservedTensor.from_entries((2, 2), [[0, 0]], [-2.0])
    assert frobenius_norm(obs) == pytest.approx(2.0)
    covariate = Covariate(
        mode=0, values=np.array([[3.0, 100.0]]), mask=np.array([[True, False]])
    )
    assert frobenius_norm(covariate) == pytest.approx(3.0)


def test_covariate_mask_zeroes_unobserved_values():
    covariate = Covariate(
        mode=1, values=np.array([[1.0, 2.0], [3.0, 4.0]]), mask=np.array([[True, False], [False, True]])
    )
    assert covariate.values.tolist() == [[1.0, 0.0], [0.0, 4.0]]
    assert covariate.width == 2
    with pytest.raises(DimensionError):
        Covariate(mode=0, values=np.ones((2, 2)), mask=np.ones((2, 3), dtype=bool))


def test_coupled_data_checks_rows():
    tensor = ObservedTensor.empty((3, 4))
    data = CoupledData(tensor=tensor, covariates=(Covariate(mode=1, values=np.ones((4, 2))),))
    assert data.dims == (3, 4)
    assert data.without_covariates().covariates == ()
    with pytest.raises(DimensionError):
        CoupledData(tensor=tensor, covariates=(Covariate(mode=0, values=np.ones((4, 2))),))
    with pytest.raises(DimensionError):
        CoupledData(tensor=tensor, covariates=(Covariate(mode=2, values=np.ones((4, 2))),))


def test_split_observed():
    dense = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    obs = project(np.argwhere(np.ones(dense.shape, dtype=bool)), dense)
    train, test = split_observed(obs, 0.25, make_rng(0, "split"))
    assert (train.nnz, test.nnz) == (18, 6)
    assert sorted(train.values.tolist() + test.values.tolist()) == obs.values.tolist()
    with pytest.raises(DimensionError):
        split_observed(obs, 1.5, make_rng(0, "split"))


def test_reconstruct_small_cases():
    e0 = np.array([[1.0], [0.0]])
    single = reconstruct(CPFactors(weights=np.array([1.0]), factors=(e0, e0, e0)))
    expected = np.zeros((2, 2, 2))
    expected[0, 0, 0] = 1.0
    assert np.array_equal(single, expected)
    assert np.array_equal(reconstruct(CPFactors.empty((2, 3, 2))), np.zeros((2, 3, 2)))


def test_contractions_of_all_ones():
    dense = np.ones((2, 2, 2))
    obs = project(np.argwhere(dense > 0.0), dense)
    e0 = np.array([1.0, 0.0])
    assert masked_contract(obs, {1: e0, 2: e0}, 0).tolist() == [1.0, 1.0]
    assert masked_weight(obs, {1: e0, 2: e0}, 0).tolist() == [1.0, 1.0]
    assert masked_contract(ObservedTensor.empty((2, 2, 2)), {1: e0, 2: e0}, 0).tolist() == [0.0, 0.0]

    diagonal = np.zeros((3, 3, 3))
    for i in range(3):
        diagonal[i, i, i] = 1.0
    e = np.array([1.0, 0.0, 0.0])
    assert dense_contract(diagonal, {0: e, 2: e}, 1).tolist() == [1.0, 0.0, 0.0]
    assert frobenius_norm(np.ones((2, 2))) == pytest.approx(2.0)


def test_masked_contract_is_linear_in_values():
    rng = make_rng(4, "test")
    dims = (4, 3, 5)
    coords = np.argwhere(rng.random(dims) < 0.5)
    x = ObservedTensor(dims=dims, coords=coords, values=rng.standard_normal(coords.shape[0]))
    y = x.with_values(rng.standard_normal(x.nnz))
    combined = x.with_values(2.0 * x.values - 3.0 * y.values)
    fixed = {0: rng.standard_normal(4), 2: rng.standard_normal(5)}
    assert_allclose(
        masked_contract(combined, fixed, 1),
        2.0 * masked_contract(x, fixed, 1) - 3.0 * masked_contract(y, fixed, 1),
        atol=1e-12,
    )


def test_project_is_idempotent():
    rng = make_rng(5, "test")
    dense = rng.standard_normal((3, 4, 2))
    coords = np.argwhere(rng.random(dense.shape) < 0.4)
    once = project(coords, dense)
    twice = project(once.coords, once.to_dense())
    assert np.array_equal(twice.coords, once.coords)
    assert np.array_equal(twice.values, once.values)
