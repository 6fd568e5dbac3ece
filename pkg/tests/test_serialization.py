import dataclasses
from typing import Any

import numpy as np
import pytest

from costco import (
    CoupledModel,
    CovariateFactors,
    CPFactors,
    DataFormatError,
    InitConfig,
    ModelFile,
    Scenario,
    SolverConfig,
    TuneGrid,
    from_yaml,
    load_model,
    save_model,
    to_yaml,
)


def _check_serialization_identity(cls: Any, instance: Any) -> None:
    assert from_yaml(cls, to_yaml(instance)) == instance


def _model():
    return CoupledModel(
        cp=CPFactors(
            weights=np.array([2.0, 1.0 / 3.0]),
            factors=(np.array([[0.6, 0.0], [0.8, 1.0]]), np.array([[1.0, 0.1], [0.0, -0.2], [0.0, 0.3]])),
        ),
        couplings=(
            CovariateFactors(mode=1, weights=np.array([0.5, 7.0]), factor=np.array([[1.0, 0.0], [0.0, 1.0]])),
        ),
    )


def test_config_serialization():
    _check_serialization_identity(SolverConfig, SolverConfig(rank=3, sparsity=(4, 5, 6), fix_shared=True))
    _check_serialization_identity(InitConfig, InitConfig(svd_method="power", restart_jitter=0.5))
    _check_serialization_identity(TuneGrid, TuneGrid(ranks=(2, 4)))
    _check_serialization_identity(Scenario, Scenario(dims=(4, 5, 6), coupled_modes=(1,)))


def test_model_file_round_trip(tmp_path):
    path = tmp_path / "model.yaml"
    save_model(path, ModelFile(model=_model(), seed=3, objective=0.125, metadata={"rank": 2.0}))
    loaded = load_model(path)

    assert loaded.seed == 3
    assert loaded.objective == 0.125
    assert loaded.metadata == {"rank": 2.0}
    model = loaded.model
    assert np.array_equal(model.cp.weights, _model().cp.weights)
    for x, y in zip(model.cp.factors, _model().cp.factors):
        assert np.array_equal(x, y)
    assert model.couplings[0].mode == 1
    assert np.array_equal(model.couplings[0].factor, _model().couplings[0].factor)


def test_save_bare_model(tmp_path):
    path = tmp_path / "model.yaml"
    save_model(path, _model())
    text = path.read_text()
    assert text.startswith("# YAML generated via costco")
    assert "!dataclass:CoupledModel" in text
    assert "!ndarray" in text
    assert load_model(path).objective is None


def test_load_model_rejects_other_documents(tmp_path):
    path = tmp_path / "model.yaml"
    path.write_text(to_yaml(SolverConfig()))
    with pytest.raises(DataFormatError):
        load_model(path)

    path.write_text("a: 1\n")
    with pytest.raises(DataFormatError):
        load_model(path)


def test_nested_dataclass_serialization():
    @dataclasses.dataclass(frozen=True)
    class Run:
        solver: SolverConfig = SolverConfig()
        scenario: Scenario = Scenario()

    _check_serialization_identity(Run, Run(solver=SolverConfig(restarts=2)))
