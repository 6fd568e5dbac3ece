import math

import numpy as np
import pytest

from costco import (
    AllRestartsDegenerateError,
    Covariate,
    CoupledData,
    CoupledModel,
    CovariateFactors,
    CPFactors,
    DimensionError,
    ObservedTensor,
    SolverConfig,
    TuneGrid,
    bic,
    project,
    reconstruct_at,
    reconstruct_covariate,
    tune,
)


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x)


def _rank1_data(with_covariate: bool = False):
    a = _unit([1.0, -2.0, 0.5, 3.0, 1.0, 2.0])
    b = _unit([2.0, 1.0, -1.0, 0.5, -2.0, 1.5])
    c = _unit([1.0, 1.0, -3.0, 2.0, 0.5, -1.0])
    model = CoupledModel(
        cp=CPFactors(weights=np.array([2.0]), factors=(a[:, None], b[:, None], c[:, None])),
        couplings=(CovariateFactors(mode=0, weights=np.array([3.0]), factor=_unit([1.0, 2.0, -1.0, 1.0])[:, None]),)
        if with_covariate
        else (),
    )
    coords = np.argwhere(np.ones((6, 6, 6), dtype=bool))
    tensor = ObservedTensor(dims=(6, 6, 6), coords=coords, values=reconstruct_at(model.cp, coords))
    covariates = (Covariate(mode=0, values=reconstruct_covariate(model, 0)),) if with_covariate else ()
    return model, CoupledData(tensor=tensor, covariates=covariates)


def test_tune_grid_sorts_and_validates():
    grid = TuneGrid(ranks=(3, 1, 3), sparsity_fracs=(1.0, 0.5))
    assert grid.ranks == (1, 3)
    assert grid.sparsity_fracs == (0.5, 1.0)
    with pytest.raises(DimensionError):
        TuneGrid(ranks=())
    with pytest.raises(DimensionError):
        TuneGrid(ranks=(0,))
    with pytest.raises(DimensionError):
        TuneGrid(sparsity_fracs=(1.5,))


def test_bic_of_exact_fit_uses_misfit_floor():
    model, data = _rank1_data()
    n = 6**3
    expected = math.log(1e-30) + math.log(n) / n * 18
    assert bic(data, model) == pytest.approx(expected)


def test_bic_with_covariate():
    model, data = _rank1_data(with_covariate=True)
    n = 6**3 + 6 * 4
    expected = math.log(1e-30) + math.log(n) / n * (18 + 4)
    assert bic(data, model) == pytest.approx(expected)


def test_bic_penalizes_nonzeros_and_misfit():
    model, data = _rank1_data()
    sparse = CoupledModel(
        cp=CPFactors(
            weights=model.cp.weights,
            factors=(model.cp.factors[0] * np.array([[1.0], [0.0], [1.0], [1.0], [1.0], [1.0]]),)
            + model.cp.factors[1:],
        )
    )
    scaled = CoupledModel(cp=CPFactors(weights=2.0 * model.cp.weights, factors=model.cp.factors))
    n = 6**3
    misfit = float(np.sum(data.tensor.values**2)) / n
    assert bic(data, scaled) == pytest.approx(math.log(misfit) + math.log(n) / n * 18)
    # A worse fit with fewer nonzeros still loses to the exact fit.
    assert bic(data, sparse) > bic(data, model)


def test_bic_rejects_empty_tensor():
    model, _ = _rank1_data()
    with pytest.raises(DimensionError):
        bic(CoupledData(tensor=ObservedTensor.empty((6, 6, 6))), model)


def test_tune_selects_rank_one_dense():
    _, data = _rank1_data()
    grid = TuneGrid(ranks=(1, 2), sparsity_fracs=(0.5, 1.0))
    result = tune(data, grid, SolverConfig(restarts=1, max_iters=50))
    assert result.rank == 1
    assert result.fraction == 1.0
    assert result.sparsity == (6, 6, 6)
    assert result.covariate_sparsity == ()
    assert result.rank_bics[0][0] == 1
    assert [f for f, _ in result.sparsity_bics] == [0.5, 1.0]
    assert result.fit.model.rank == 1


def test_tune_truncates_coupled_modes_and_covariates():
    _, data = _rank1_data(with_covariate=True)
    grid = TuneGrid(ranks=(1,), sparsity_fracs=(0.5,))
    result = tune(data, grid, SolverConfig(restarts=1, max_iters=20))
    assert result.sparsity == (3, 3, 3)
    assert result.covariate_sparsity == (2,)
    model = result.fit.model
    assert np.count_nonzero(model.cp.factors[0]) <= 3
    assert np.count_nonzero(model.couplings[0].factor) <= 2


def test_tune_all_degenerate():
    _, data = _rank1_data()
    zeros = CoupledData(tensor=data.tensor.with_values(np.zeros(data.tensor.nnz)))
    with pytest.raises(AllRestartsDegenerateError):
        tune(zeros, TuneGrid(ranks=(1, 2)), SolverConfig(restarts=1))
