import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_allclose

from costco import (
    AllRestartsDegenerateError,
    CoupledData,
    CoupledModel,
    CPFactors,
    Covariate,
    DegenerateComponentError,
    DimensionError,
    InitConfig,
    ObservedTensor,
    Scenario,
    SolverConfig,
    SolverState,
    complete,
    fit,
    initialize,
    masked_contract,
    masked_weight,
    metrics,
    objective,
    project,
    reconstruct,
    reconstruct_at,
    reconstruct_covariate,
    residual_matrix,
    residual_tensor,
    simulate,
    sweep,
    truncate,
    update_coupled_mode,
    update_covariate,
    update_uncoupled_mode,
)
from costco._model import CovariateFactors
from costco._solver import budget_from_fraction


def _unit(x):
    x = np.asarray(x, dtype=np.float64)
    return x / np.linalg.norm(x)


def _rank1_problem(with_covariate: bool = False):
    a = _unit([1.0, -2.0, 0.5, 3.0, 1.0])
    b = _unit([2.0, 1.0, -1.0, 0.5])
    c = _unit([1.0, 1.0, -3.0, 2.0, 0.5, -1.0])
    v = _unit([1.0, 2.0, -1.0])
    truth = CoupledModel(
        cp=CPFactors(weights=np.array([2.0]), factors=(a[:, None], b[:, None], c[:, None])),
        couplings=(CovariateFactors(mode=0, weights=np.array([3.0]), factor=v[:, None]),)
        if with_covariate
        else (),
    )
    dense = reconstruct(truth.cp)
    tensor = project(np.argwhere(np.ones(dense.shape, dtype=bool)), dense)
    covariates = (
        (Covariate(mode=0, values=reconstruct_covariate(truth, 0)),) if with_covariate else ()
    )
    return truth, CoupledData(tensor=tensor, covariates=covariates)


def test_truncate_keeps_largest_magnitudes():
    assert truncate(np.array([0.1, 0.2, 0.5, -0.6]), 2).tolist() == [0.0, 0.0, 0.5, -0.6]
    assert truncate(np.array([3.0, -5.0, 1.0, 5.0]), 2).tolist() == [0.0, -5.0, 0.0, 5.0]
    assert truncate(np.array([3.0, -5.0, 1.0]), 3).tolist() == [3.0, -5.0, 1.0]


def test_truncate_ties_keep_earliest():
    assert truncate(np.array([0.5, 0.5, 0.5, 0.4, 0.3]), 2).tolist() == [0.5, 0.5, 0.0, 0.0, 0.0]
    assert truncate(np.array([1.0, -1.0, 1.0]), 2).tolist() == [1.0, -1.0, 0.0]
    assert truncate(np.zeros(4), 1).tolist() == [0.0] * 4


def test_truncate_rejects_bad_budgets():
    with pytest.raises(DimensionError):
        truncate(np.ones(3), 0)
    with pytest.raises(DimensionError):
        truncate(np.ones(3), 4)


def test_budget_from_fraction():
    assert budget_from_fraction(10, 0.4) == 4
    assert budget_from_fraction(30, 0.4) == 12
    assert budget_from_fraction(3, 0.1) == 1
    assert budget_from_fraction(7, 1.0) == 7
    with pytest.raises(DimensionError):
        budget_from_fraction(7, 0.0)


def test_solver_config_budgets():
    config = SolverConfig(rank=1, sparsity=(2, 3))
    assert config.mode_budgets((4, 5)) == (2, 3)
    assert SolverConfig().mode_budgets((4, 5)) == (4, 5)
    assert SolverConfig().covariate_budgets((6,)) == (6,)
    with pytest.raises(DimensionError):
        config.mode_budgets((4, 5, 6))
    with pytest.raises(DimensionError):
        SolverConfig(sparsity=(5, 1)).mode_budgets((4, 5))
    with pytest.raises(DimensionError):
        SolverConfig(restarts=0)


def test_residual_tensor_excludes_component():
    rng = np.random.default_rng(0)
    factors = tuple(rng.standard_normal((n, 2)) for n in (3, 4, 2))
    cp = CPFactors(weights=np.array([1.5, 0.5]), factors=factors)
    dense = reconstruct(cp)
    tensor = project(np.argwhere(np.ones(dense.shape, dtype=bool)), dense)
    model = CoupledModel(cp=cp)

    component_0 = CPFactors(weights=cp.weights[:1], factors=tuple(f[:, :1] for f in factors))
    residual = residual_tensor(tensor, model, 0)
    assert_allclose(residual.values, reconstruct_at(component_0, tensor.coords), atol=1e-12)
    with pytest.raises(DimensionError):
        residual_tensor(tensor, model, 2)


def test_residual_matrix_respects_mask():
    truth, data = _rank1_problem(with_covariate=True)
    values = data.covariates[0].values
    mask = np.zeros(values.shape, dtype=bool)
    mask[0, :] = True
    covariate = Covariate(mode=0, values=values, mask=mask)
    residual = residual_matrix(covariate, truth, 0, 0)
    # Component 0 is the only one, so its residual is the observed matrix itself.
    assert_allclose(residual[0], values[0])
    assert np.all(residual[1:] == 0.0)


def test_objective_of_truth_is_zero():
    truth, data = _rank1_problem(with_covariate=True)
    assert objective(data, truth) == pytest.approx(0.0, abs=1e-20)
    assert objective(data, SolverState.from_model(truth)) == pytest.approx(0.0, abs=1e-20)


def test_noiseless_rank1_recovery():
    truth, data = _rank1_problem()
    config = SolverConfig(rank=1, restarts=1)
    init = initialize(data, None, 1)
    result = fit(data, config, init)

    assert result.converged
    assert result.restart_index == 0
    assert result.objective < 1e-20
    assert_allclose(result.model.cp.weights, [2.0], rtol=1e-8)
    assert metrics(result.model, truth).tensor_error < 1e-8


def test_noiseless_coupled_rank1_recovery():
    truth, data = _rank1_problem(with_covariate=True)
    config = SolverConfig(rank=1, restarts=2)
    result = fit(data, config, initialize(data, None, 1))

    assert result.objective < 1e-20
    assert_allclose(result.model.cp.weights, [2.0], rtol=1e-8)
    assert_allclose(result.model.couplings[0].weights, [3.0], rtol=1e-8)
    assert_allclose(
        reconstruct_covariate(result.model, 0), data.covariates[0].values, atol=1e-10
    )
    report = metrics(result.model, truth)
    assert report.covariate_errors[0] < 1e-8
    assert report.sigma_errors[0] < 1e-8


def test_objective_trace_starts_with_initial_objective():
    _, data = _rank1_problem(with_covariate=True)
    init = initialize(data, None, 1)
    result = fit(data, SolverConfig(rank=1, restarts=1, max_iters=3), init)
    assert result.objective_trace[0] == pytest.approx(objective(data, init))
    assert len(result.objective_trace) == result.iterations + 1


def test_fix_shared_keeps_coupled_columns():
    _, data = _rank1_problem(with_covariate=True)
    init = initialize(data, None, 1)
    config = SolverConfig(rank=1, restarts=3, fix_shared=True, max_iters=5)
    result = fit(data, config, init)
    assert np.array_equal(result.model.cp.factors[0], init.cp.factors[0])


def test_sparse_budgets_hold():
    _, data = _rank1_problem()
    config = SolverConfig(rank=1, restarts=1, sparsity=(2, 4, 3), max_iters=10)
    result = fit(data, config, initialize(data, None, 1))
    counts = [int(np.count_nonzero(f[:, 0])) for f in result.model.cp.factors]
    assert counts[0] <= 2 and counts[1] <= 4 and counts[2] <= 3
    for f in result.model.cp.factors:
        assert np.linalg.norm(f[:, 0]) == pytest.approx(1.0)


def test_fit_is_deterministic():
    _, data = _rank1_problem(with_covariate=True)
    config = SolverConfig(rank=1, restarts=3, max_iters=4, seed=5)
    init = initialize(data, None, 1)
    first = fit(data, config, init)
    second = fit(data, config, init)
    assert first.objective_trace == second.objective_trace
    assert first.restart_index == second.restart_index


def test_fit_rejects_mismatched_init():
    _, data = _rank1_problem()
    init = initialize(data, None, 1)
    with pytest.raises(DimensionError):
        fit(data, SolverConfig(rank=2), init)
    with pytest.raises(DimensionError):
        fit(data, dataclasses.replace(SolverConfig(rank=1), sparsity=(1, 1)), init)


def test_all_restarts_degenerate():
    truth, data = _rank1_problem()
    zeros = CoupledData(tensor=data.tensor.with_values(np.zeros(data.tensor.nnz)))
    with pytest.raises(AllRestartsDegenerateError):
        fit(zeros, SolverConfig(rank=1, restarts=2), truth, InitConfig())


def test_complete_matches_reconstruction():
    truth, _ = _rank1_problem()
    coords = np.array([[0, 0, 0], [4, 3, 5]])
    assert_allclose(complete(truth, coords), reconstruct(truth.cp)[tuple(coords.T)])


def test_objective_of_empty_model():
    _, data = _rank1_problem(with_covariate=True)
    empty = CoupledModel(
        cp=CPFactors.empty(data.dims),
        couplings=(CovariateFactors(mode=0, weights=np.zeros(0), factor=np.zeros((3, 0))),),
    )
    expected = float(np.sum(data.tensor.values**2) + np.sum(data.covariates[0].values**2))
    assert objective(data, empty) == pytest.approx(expected)


def _unit_columns(x):
    return x / np.linalg.norm(x, axis=0)[None, :]


def _random_instance(rng):
    dims = (4, 3, 5)
    model = CoupledModel(
        cp=CPFactors(
            weights=np.abs(rng.standard_normal(2)) + 0.5,
            factors=tuple(_unit_columns(rng.standard_normal((n, 2))) for n in dims),
        ),
        couplings=(
            CovariateFactors(
                mode=0,
                weights=np.abs(rng.standard_normal(2)) + 0.5,
                factor=_unit_columns(rng.standard_normal((3, 2))),
            ),
        ),
    )
    coords = np.argwhere(rng.random(dims) < 0.6)
    tensor = ObservedTensor(dims=dims, coords=coords, values=rng.standard_normal(coords.shape[0]))
    covariate = Covariate(mode=0, values=rng.standard_normal((4, 3)))
    return model, CoupledData(tensor=tensor, covariates=(covariate,))


def _copy(state):
    return SolverState(
        weights=state.weights.copy(),
        factors=[f.copy() for f in state.factors],
        sigmas=[s.copy() for s in state.sigmas],
        covariate_factors=[v.copy() for v in state.covariate_factors],
        coupling_modes=state.coupling_modes,
    )


def test_update_coupled_mode_fixed_point():
    truth, data = _rank1_problem(with_covariate=True)
    state = update_coupled_mode(SolverState.from_model(truth), data, SolverConfig(rank=1), 0, 0)
    assert_allclose(state.factors[0], truth.cp.factors[0], atol=1e-12)
    with pytest.raises(DimensionError):
        update_coupled_mode(SolverState.from_model(truth), data, SolverConfig(rank=1), 0, 1)


def test_update_coupled_mode_without_covariate_weight():
    rng = np.random.default_rng(1)
    model, data = _random_instance(rng)
    state = SolverState.from_model(model)
    r = 1
    state.sigmas[0][r] = 0.0
    residual = residual_tensor(data.tensor, state, r)
    fixed = {1: state.factors[1][:, r], 2: state.factors[2][:, r]}
    numerator = masked_contract(residual, fixed, 0)
    denominator = masked_weight(residual, fixed, 0)
    expected = np.where(denominator > 0.0, numerator / np.where(denominator > 0.0, denominator, 1.0), 0.0)

    update_coupled_mode(state, data, SolverConfig(rank=2), r, 0)
    assert_allclose(state.factors[0][:, r], expected / np.linalg.norm(expected), atol=1e-12)


def test_update_coupled_mode_cold_start_slice():
    truth, data = _rank1_problem(with_covariate=True)
    keep = data.tensor.coords[:, 0] != 2
    cold = CoupledData(
        tensor=ObservedTensor(
            dims=data.dims, coords=data.tensor.coords[keep], values=data.tensor.values[keep]
        ),
        covariates=data.covariates,
    )
    state = update_coupled_mode(SolverState.from_model(truth), cold, SolverConfig(rank=1), 0, 0)
    assert np.all(np.isfinite(state.factors[0]))
    # The unobserved slice is filled in from the covariate.
    assert_allclose(state.factors[0], truth.cp.factors[0], atol=1e-12)


def test_update_uncoupled_mode_matches_least_squares():
    rng = np.random.default_rng(3)
    model, data = _random_instance(rng)
    state = SolverState.from_model(model)
    r = 1
    residual = residual_tensor(data.tensor, state, r)
    design = (
        state.factors[0][residual.coords[:, 0], r] * state.factors[2][residual.coords[:, 2], r]
    )
    expected = np.zeros(3)
    for j in range(3):
        rows = residual.coords[:, 1] == j
        if np.any(rows):
            expected[j] = np.linalg.lstsq(design[rows, None], residual.values[rows], rcond=None)[0][0]

    update_uncoupled_mode(state, data, SolverConfig(rank=2), r, 1, True)
    assert_allclose(state.weights[r] * state.factors[1][:, r], expected, atol=1e-12)
    assert np.linalg.norm(state.factors[1][:, r]) == pytest.approx(1.0)


def test_update_covariate_recovers_rank1_factor():
    truth, data = _rank1_problem(with_covariate=True)
    state = SolverState.from_model(truth)
    state.covariate_factors[0][:, 0] = _unit([1.0, 0.0, 1.0])
    state.sigmas[0][0] = 1.0
    update_covariate(state, data, SolverConfig(rank=1), 0, 0)
    assert_allclose(state.covariate_factors[0], truth.couplings[0].factor, atol=1e-12)
    assert state.sigmas[0][0] == pytest.approx(3.0)


def test_update_covariate_zero_matrix_is_degenerate():
    truth, data = _rank1_problem(with_covariate=True)
    zeros = CoupledData(tensor=data.tensor, covariates=(Covariate(mode=0, values=np.zeros((5, 3))),))
    with pytest.raises(DegenerateComponentError):
        update_covariate(SolverState.from_model(truth), zeros, SolverConfig(rank=1), 0, 0)


def test_sweep_fixed_point_and_empty_model():
    truth, data = _rank1_problem(with_covariate=True)
    state = sweep(SolverState.from_model(truth), data, SolverConfig(rank=1))
    for x, y in zip(state.factors, truth.cp.factors):
        assert_allclose(x, y, atol=1e-12)
    assert_allclose(state.weights, [2.0], rtol=1e-12)
    assert_allclose(state.sigmas[0], [3.0], rtol=1e-12)

    _, plain = _rank1_problem()
    empty = SolverState.from_model(CoupledModel(cp=CPFactors.empty(plain.dims)))
    state = sweep(empty, plain, SolverConfig(rank=0))
    assert state.rank == 0
    assert objective(plain, state) == pytest.approx(float(np.sum(plain.tensor.values**2)))


def test_block_updates_are_least_squares_optimal():
    rng = np.random.default_rng(7)
    config = SolverConfig(rank=2)
    for _ in range(100):
        _, data = _random_instance(rng)
        model, _ = _random_instance(rng)
        r = int(rng.integers(2))

        state = update_uncoupled_mode(SolverState.from_model(model), data, config, r, 2, True)
        best = objective(data, state)
        for _ in range(3):
            trial = _copy(state)
            trial.factors[2][:, r] += 1e-3 * rng.standard_normal(5)
            assert objective(data, trial) >= best - 1e-10

        state = update_covariate(state, data, config, r, 0)
        best = objective(data, state)
        for _ in range(3):
            trial = _copy(state)
            trial.covariate_factors[0][:, r] += 1e-3 * rng.standard_normal(3)
            assert objective(data, trial) >= best - 1e-10


def test_fix_shared_with_noiseless_covariate():
    truth, data = _rank1_problem(with_covariate=True)
    init = initialize(data, None, 1)
    result = fit(data, SolverConfig(rank=1, restarts=2, fix_shared=True), init)
    assert_allclose(np.abs(result.model.cp.factors[0]), np.abs(init.cp.factors[0]), rtol=0, atol=0)
    assert metrics(result.model, truth).component_errors[0] < 1e-12


def test_fix_shared_keeps_weight_when_all_modes_coupled():
    a, b = _unit([1.0, 2.0, -1.0]), _unit([2.0, -1.0, 1.0, 1.0])
    va, vb = _unit([1.0, 1.0]), _unit([1.0, -2.0, 1.0])
    dense = -2.0 * np.outer(a, b)
    data = CoupledData(
        tensor=project(np.argwhere(np.ones(dense.shape, dtype=bool)), dense),
        covariates=(
            Covariate(mode=0, values=1.5 * np.outer(a, va)),
            Covariate(mode=1, values=0.5 * np.outer(b, vb)),
        ),
    )
    model = CoupledModel(
        cp=CPFactors(weights=np.array([1.0]), factors=(a[:, None], b[:, None])),
        couplings=(
            CovariateFactors(mode=0, weights=np.array([1.5]), factor=va[:, None]),
            CovariateFactors(mode=1, weights=np.array([0.5]), factor=vb[:, None]),
        ),
    )

    state = sweep(SolverState.from_model(model), data, SolverConfig(rank=1, fix_shared=True))
    assert np.array_equal(state.factors[0], model.cp.factors[0])
    assert np.array_equal(state.factors[1], model.cp.factors[1])
    assert state.weights[0] == 1.0

    state = sweep(SolverState.from_model(model), data, SolverConfig(rank=1))
    assert state.weights[0] == pytest.approx(2.0)
    cp = CPFactors(weights=state.weights, factors=tuple(state.factors))
    assert_allclose(reconstruct(cp), dense, atol=1e-12)


def test_noiseless_rank2_recovery():
    scenario = Scenario(
        dims=(20, 20, 20),
        covariate_width=20,
        rank=2,
        sparsity=1.0,
        eta_tensor=0.0,
        eta_matrix=0.0,
        reveal_prob=1.0,
        replicas=1,
        seed=3,
    )
    instance = simulate(scenario)
    config = SolverConfig(rank=2, restarts=2, tol=1e-12, max_iters=1000)
    result = fit(instance.data, config, initialize(instance.data, None, 2))
    report = metrics(result.model, instance.truth, instance.truth_tensor)
    assert report.tensor_error < 1e-8
    assert max(report.component_errors) < 1e-6
