"""Synthetic coupled tensor/covariate data and the replicated recovery experiment."""

import dataclasses
import itertools
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ._errors import AllRestartsDegenerateError, DegenerateComponentError, DimensionError
from ._initialization import InitConfig, initialize
from ._model import CoupledModel, CovariateFactors, CPFactors, covariate_product, metrics
from ._random import make_rng
from ._solver import FitResult, SolverConfig, budget_from_fraction, fit, truncate
from ._tensors import Covariate, CoupledData, ObservedTensor, reconstruct
from ._tuning import TuneGrid, tune

logger = logging.getLogger(__name__)

EXPERIMENT_COLUMNS = (
    "reveal_prob",
    "eta_tensor",
    "eta_matrix",
    "coupled_dim",
    "rank",
    "method",
    "metric",
    "mean",
    "stderr",
)


@dataclasses.dataclass(frozen=True)
class Scenario:
    """One synthetic setting. Every covariate is `covariate_width` wide and coupled to
    one of `coupled_modes`."""

    dims: Tuple[int, ...] = (30, 30, 30, 30)
    coupled_modes: Tuple[int, ...] = (0,)
    covariate_width: int = 30
    rank: int = 2

    # Fraction of entries kept in each uncoupled factor column. Coupled modes and
    # covariate factors stay dense.
    sparsity: float = 0.4

    eta_tensor: float = 0.001  # Tensor noise level, relative to ‖T*‖_F.
    eta_matrix: float = 0.001  # Covariate noise level, relative to ‖M*‖_F.
    reveal_prob: float = 0.1  # Probability that a tensor entry is observed.
    covariate_reveal_prob: float = 1.0  # Probability that a covariate entry is observed.
    replicas: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 2 or any(n < 1 for n in dims):
            raise DimensionError(f"Invalid dims {dims}.")
        if any(not 0 <= m < len(dims) for m in self.coupled_modes):
            raise DimensionError(f"Coupled modes {self.coupled_modes} out of range.")
        if self.rank < 1 or self.covariate_width < 1:
            raise DimensionError("rank and covariate_width must be positive.")
        if not 0.0 < self.sparsity <= 1.0:
            raise DimensionError(f"sparsity must lie in (0, 1], got {self.sparsity}.")
        for name in ("reveal_prob", "covariate_reveal_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise DimensionError(f"{name} must lie in [0, 1], got {getattr(self, name)}.")
        if self.eta_tensor < 0.0 or self.eta_matrix < 0.0:
            raise DimensionError("Noise levels must be nonnegative.")
        if self.replicas < 1:
            raise DimensionError(f"replicas must be at least 1, got {self.replicas}.")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "coupled_modes", tuple(int(m) for m in self.coupled_modes))

    @property
    def coupled_dim(self) -> int:
        """Size of the first coupled mode; 0 without couplings."""
        return self.dims[self.coupled_modes[0]] if self.coupled_modes else 0

    def with_coupled_dim(self, size: int) -> "Scenario":
        """Same scenario with every coupled mode resized."""
        dims = tuple(size if m in self.coupled_modes else n for m, n in enumerate(self.dims))
        return dataclasses.replace(self, dims=dims)

    def mode_budgets(self) -> Tuple[int, ...]:
        return tuple(
            n if m in self.coupled_modes else budget_from_fraction(n, self.sparsity)
            for m, n in enumerate(self.dims)
        )


@dataclasses.dataclass(frozen=True, eq=False)
class SimulatedInstance:
    truth: CoupledModel
    truth_tensor: np.ndarray
    truth_covariates: Tuple[np.ndarray, ...]  # Noise-free M*_j, in coupling order.
    data: CoupledData


def gen_truth(
    scenario: Scenario, rng: Optional[np.random.Generator] = None
) -> Tuple[CoupledModel, np.ndarray, Tuple[np.ndarray, ...]]:
    """Ground truth: standard normal columns, uncoupled ones truncated to the top
    `scenario.sparsity` fraction. λ_r is the product of the raw column norms across
    tensor modes and σ_r that of the coupled column and v_r; all columns are then
    normalized."""
    if rng is None:
        rng = make_rng(scenario.seed, "truth")
    budgets = scenario.mode_budgets()
    raw = []
    for mode, n in enumerate(scenario.dims):
        columns = rng.standard_normal((n, scenario.rank))
        if budgets[mode] < n:
            columns = np.stack(
                [truncate(columns[:, r], budgets[mode]) for r in range(scenario.rank)],
                axis=1,
            )
        raw.append(columns)
    raw_v = [
        rng.standard_normal((scenario.covariate_width, scenario.rank))
        for _ in scenario.coupled_modes
    ]

    norms = [np.linalg.norm(a, axis=0) for a in raw]
    weights = np.prod(np.stack(norms), axis=0)
    cp = CPFactors(
        weights=weights, factors=tuple(a / n[None, :] for a, n in zip(raw, norms))
    )
    couplings = []
    for mode, v in zip(scenario.coupled_modes, raw_v):
        v_norms = np.linalg.norm(v, axis=0)
        couplings.append(
            CovariateFactors(
                mode=mode, weights=norms[mode] * v_norms, factor=v / v_norms[None, :]
            )
        )
    truth = CoupledModel(cp=cp, couplings=tuple(couplings))
    matrices = tuple(covariate_product(cp.factors[c.mode], c) for c in truth.couplings)
    return truth, reconstruct(cp), matrices


def _add_noise(signal: np.ndarray, eta: float, rng: np.random.Generator) -> np.ndarray:
    noise = rng.standard_normal(signal.shape)
    if eta == 0.0:
        return signal.copy()
    return signal + eta * noise * (np.linalg.norm(signal) / np.linalg.norm(noise))


def corrupt(
    truth_tensor: np.ndarray,
    covariates: Sequence[Covariate],
    eta_tensor: float,
    eta_matrix: float,
    reveal_prob: float,
    rng: np.random.Generator,
    covariate_reveal_prob: float = 1.0,
) -> CoupledData:
    """Add Gaussian noise scaled to η·‖signal‖_F, then reveal each tensor entry with
    probability `reveal_prob` (and each covariate entry with `covariate_reveal_prob`)."""
    if not 0.0 <= reveal_prob <= 1.0 or not 0.0 <= covariate_reveal_prob <= 1.0:
        raise DimensionError("Reveal probabilities must lie in [0, 1].")
    noisy = _add_noise(truth_tensor, eta_tensor, rng)
    revealed = rng.random(truth_tensor.shape) < reveal_prob
    tensor = ObservedTensor(
        dims=truth_tensor.shape, coords=np.argwhere(revealed), values=noisy[revealed]
    )

    noisy_covariates = []
    for covariate in covariates:
        values = _add_noise(covariate.values, eta_matrix, rng)
        mask = None
        if covariate_reveal_prob < 1.0:
            mask = rng.random(values.shape) < covariate_reveal_prob
        noisy_covariates.append(Covariate(mode=covariate.mode, values=values, mask=mask))
    return CoupledData(tensor=tensor, covariates=tuple(noisy_covariates))


def simulate(scenario: Scenario, replica: int = 0) -> SimulatedInstance:
    """Replica `replica` of a scenario. Truth, noise and masks are all redrawn per
    replica from independent streams."""
    truth, truth_tensor, matrices = gen_truth(
        scenario, make_rng(scenario.seed, "replica", replica, "truth")
    )
    data = corrupt(
        truth_tensor,
        [Covariate(mode=c.mode, values=m) for c, m in zip(truth.couplings, matrices)],
        scenario.eta_tensor,
        scenario.eta_matrix,
        scenario.reveal_prob,
        make_rng(scenario.seed, "replica", replica, "corrupt"),
        scenario.covariate_reveal_prob,
    )
    return SimulatedInstance(
        truth=truth, truth_tensor=truth_tensor, truth_covariates=matrices, data=data
    )


def _fit_method(
    data: CoupledData,
    scenario: Scenario,
    config: SolverConfig,
    init_config: InitConfig,
    grid: Optional[TuneGrid],
) -> FitResult:
    if grid is not None:
        return tune(data, grid, config, init_config).fit
    config = dataclasses.replace(
        config,
        rank=scenario.rank,
        sparsity=scenario.mode_budgets(),
        covariate_sparsity=None,
    )
    return fit(data, config, initialize(data, None, config.rank, init_config), init_config)


def _replica_metrics(
    result: FitResult, instance: SimulatedInstance
) -> Dict[str, float]:
    estimate = result.model
    if estimate.rank != instance.truth.rank:
        # Components can't be matched; only the tensor error is defined.
        diff = reconstruct(estimate.cp) - instance.truth_tensor
        return {
            "tensor_error": float(
                np.linalg.norm(diff) / np.linalg.norm(instance.truth_tensor)
            )
        }
    truth = instance.truth if estimate.couplings else instance.truth.without_couplings()
    return metrics(estimate, truth, instance.truth_tensor).as_dict()


def run_experiment(
    scenario: Scenario,
    config: SolverConfig,
    init_config: Optional[InitConfig] = None,
    grid: Optional[TuneGrid] = None,
) -> pd.DataFrame:
    """Mean and standard error of every recovery metric over the scenario's replicas,
    for the coupled solver (`costco`) and the same solver without covariates
    (`ablation`). With `grid`, rank and sparsity are tuned per replica; otherwise the
    scenario's true rank and budgets are used."""
    if init_config is None:
        init_config = InitConfig()
    records: List[Dict[str, object]] = []
    for replica in range(scenario.replicas):
        instance = simulate(scenario, replica)
        solver_seed = int(make_rng(scenario.seed, "replica", replica, "solver").integers(2**31))
        replica_config = dataclasses.replace(config, seed=solver_seed)
        replica_init = dataclasses.replace(init_config, seed=solver_seed)
        for method, data in (
            ("costco", instance.data),
            ("ablation", instance.data.without_covariates()),
        ):
            try:
                result = _fit_method(data, scenario, replica_config, replica_init, grid)
            except (AllRestartsDegenerateError, DegenerateComponentError) as e:
                logger.warning("Replica %d, %s: no fit (%s)", replica, method, e)
                continue
            for metric, value in _replica_metrics(result, instance).items():
                records.append(
                    {"replica": replica, "method": method, "metric": metric, "value": value}
                )
        logger.info("Replica %d of %d done.", replica + 1, scenario.replicas)

    frame = pd.DataFrame.from_records(
        records, columns=["replica", "method", "metric", "value"]
    )
    summary = (
        frame.groupby(["method", "metric"], sort=False)["value"]
        .agg(["mean", "sem"])
        .reset_index()
        .rename(columns={"sem": "stderr"})
    )
    summary.insert(0, "reveal_prob", scenario.reveal_prob)
    summary.insert(1, "eta_tensor", scenario.eta_tensor)
    summary.insert(2, "eta_matrix", scenario.eta_matrix)
    summary.insert(3, "coupled_dim", scenario.coupled_dim)
    summary.insert(4, "rank", scenario.rank)
    return summary[list(EXPERIMENT_COLUMNS)]


def run_grid(
    scenario: Scenario,
    config: SolverConfig,
    init_config: Optional[InitConfig] = None,
    grid: Optional[TuneGrid] = None,
    reveal_probs: Sequence[float] = (),
    eta_tensors: Sequence[float] = (),
    eta_matrices: Sequence[float] = (),
    coupled_dims: Sequence[int] = (),
    ranks: Sequence[int] = (),
) -> pd.DataFrame:
    """`run_experiment` over the Cartesian product of the given axes. An empty axis
    keeps the scenario's own value."""
    frames = []
    for p, eta_t, eta_m, d, rank in itertools.product(
        reveal_probs or (scenario.reveal_prob,),
        eta_tensors or (scenario.eta_tensor,),
        eta_matrices or (scenario.eta_matrix,),
        coupled_dims or ((scenario.coupled_dim,) if scenario.coupled_modes else (0,)),
        ranks or (scenario.rank,),
    ):
        point = dataclasses.replace(
            scenario, reveal_prob=p, eta_tensor=eta_t, eta_matrix=eta_m, rank=rank
        )
        if point.coupled_modes:
            point = point.with_coupled_dim(d)
        logger.info(
            "Scenario p=%g eta_T=%g eta_M=%g d=%d R=%d", p, eta_t, eta_m, d, rank
        )
        frames.append(run_experiment(point, config, init_config, grid))
    return pd.concat(frames, ignore_index=True)
