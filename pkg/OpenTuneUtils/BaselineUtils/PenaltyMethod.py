from dataclasses import dataclass
from typing import Optional, Tuple

from tqdm import tqdm

from ..DynamicsUtils import ControlSignal, ControlledModel, ReadoutMap
from ..EnsembleUtils import Ensemble
from ..OptimizeUtils import ConvergenceError, TuningReport
from ..OptimizeUtils.LineSearch import ARMIJO_CONTRACTION, ARMIJO_SLOPE, MAX_BACKTRACKS
from .QFolded import EnsembleObjective, gradient_descent, norm_regularizer


@dataclass
class PenaltyConfig:
    """
    罚函数法微调: Σ_i J^i(ũ) + λ h Σ||ũ[ℓ] - u0[ℓ]||^2, 在整个数据集上梯度下降

    每轮 iterations_per_round 次迭代, 每轮结束记录一次指标
    """
    lambda_: float = 1.0
    step_size: float = 2.0
    armijo: bool = True
    armijo_contraction: float = ARMIJO_CONTRACTION
    armijo_slope: float = ARMIJO_SLOPE
    max_backtracks: int = MAX_BACKTRACKS
    rounds: int = 2
    iterations_per_round: int = 200
    convergence_cost_threshold: float = 0.0
    strict: bool = False
    workers: int = 1
    verbose: bool = False

    def validate(self) -> "PenaltyConfig":
        if self.lambda_ < 0:
            raise ValueError(f"lambda must be non-negative, got {self.lambda_}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.rounds < 0 or self.iterations_per_round < 0:
            raise ValueError(f"rounds and iterations_per_round must be non-negative, "
                             f"got {self.rounds} and {self.iterations_per_round}")
        if self.convergence_cost_threshold < 0:
            raise ValueError(f"convergence_cost_threshold must be non-negative, got {self.convergence_cost_threshold}")
        if self.workers < 1:
            raise ValueError(f"workers must be positive, got {self.workers}")
        return self


def penalty_tune(u0: ControlSignal, ensemble: Ensemble, j: int, model: ControlledModel, readout: ReadoutMap,
                 config: Optional[PenaltyConfig] = None) -> Tuple[ControlSignal, TuningReport]:
    """
    从 u0 出发的罚函数法微调

    Returns:
        (ũ, TuningReport): 报告 phase 为 "penalty", round 0 对应 u0
    """
    config = PenaltyConfig() if config is None else config.validate()
    if u0.p != model.p:
        raise ValueError(f"control has p={u0.p}, model expects p={model.p}")
    if not 0 <= j <= ensemble.q:
        raise ValueError(f"cutoff j={j} out of range 0..{ensemble.q}")
    objective = EnsembleObjective(ensemble, model, readout, regularizer=norm_regularizer(config.lambda_, center=u0),
                                  workers=config.workers)
    report = TuningReport()
    report.append_errors(0, "penalty", u0, ensemble, j, model, readout, iterations=0)
    u = u0
    for round_ in tqdm(range(1, config.rounds + 1), desc="penalty", disable=not config.verbose):
        result = gradient_descent(objective, u, config.step_size, config.iterations_per_round,
                                  config.convergence_cost_threshold, armijo=config.armijo,
                                  contraction=config.armijo_contraction, c=config.armijo_slope,
                                  max_backtracks=config.max_backtracks, desc=f"penalty round {round_}")
        u = result.control
        report.append_errors(round_, "penalty", u, ensemble, j, model, readout, iterations=result.iterations)
        if result.iterations < config.iterations_per_round and not result.converged:
            if config.strict:
                raise ConvergenceError(None, result.iterations, result.final_cost)
            if config.verbose:
                tqdm.write(f"penalty: line search stalled in round {round_} (cost={result.final_cost:.3e})")
    return u, report
