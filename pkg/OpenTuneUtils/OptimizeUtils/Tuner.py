from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..DynamicsUtils import ControlSignal, ControlledModel, ReadoutMap
from ..EnsembleUtils import Ensemble
from .EndpointJacobian import EndpointJacobian, endpoint_jacobian, per_sample_cost, sample_cost_and_gradient
from .KernelProjection import DEFAULT_RANK_TOLERANCE, StackedConstraints
from .LineSearch import ARMIJO_CONTRACTION, ARMIJO_SLOPE, MAX_BACKTRACKS, StepResult, descent_step
from .TuningReport import TuningReport


class ConvergenceError(RuntimeError):
    """样本在迭代上限内没有收敛"""

    def __init__(self, sample_index: Optional[int], iterations: int, final_cost: float):
        self.sample_index = sample_index
        self.iterations = iterations
        self.final_cost = final_cost
        super().__init__(
            f"sample {sample_index} did not converge after {iterations} iterations (cost={final_cost!r})"
        )


class DriftBudgetError(RuntimeError):
    """已记忆样本的代价超出漂移预算 (Phase II 的一步, 或微调结束时的 X^j)"""

    def __init__(self, sample_index: int, cost: float, budget: float):
        self.sample_index = sample_index
        self.cost = cost
        self.budget = budget
        super().__init__(f"sample {sample_index} cost {cost!r} exceeds drift budget {budget!r}")


@dataclass
class TunerConfig:
    """
    不遗忘微调的参数

    Args:
        step_size: Phase I / III 的初始步长 α
        armijo: 是否做 Armijo 回溯; 漂移预算也在回溯中检查, 关闭时为不加检查的常数步长
        convergence_cost_threshold: J^i <= 阈值视为收敛
        max_inner_iterations: Phase I 每个样本的迭代上限
        refinement_passes: Phase III 的遍历次数 P
        rounds: 细化轮数 R (Phase II + Phase III)
        rank_tolerance: 数值秩的相对阈值
        regularization_target_tolerance: Phase II 中 ||u||^2 相对下降量的停止阈值
        regularization_step_size: Phase II 的初始步长, 超出漂移预算时按 armijo_contraction 缩小 (至多 max_backtracks 次)
        recompute_every: Phase I 每隔多少次迭代重算一次约束块 (1 = 每次)
        strict: 不收敛 / 超出漂移预算时抛出异常而不是记录
        workers: 并行计算 L_i 的线程数
    """
    step_size: float = 0.25
    armijo: bool = True
    armijo_contraction: float = ARMIJO_CONTRACTION
    armijo_slope: float = ARMIJO_SLOPE
    max_backtracks: int = MAX_BACKTRACKS
    convergence_cost_threshold: float = 1e-4
    max_inner_iterations: int = 2000
    refinement_passes: int = 1
    rounds: int = 2
    rank_tolerance: float = DEFAULT_RANK_TOLERANCE
    regularization_target_tolerance: float = 1e-4
    regularization_step_size: float = 0.1
    phase2_max_iterations: int = 200
    recompute_every: int = 1
    strict: bool = False
    workers: int = 1
    verbose: bool = False

    def validate(self) -> "TunerConfig":
        positive = {
            "step_size": self.step_size,
            "convergence_cost_threshold": self.convergence_cost_threshold,
            "rank_tolerance": self.rank_tolerance,
            "regularization_target_tolerance": self.regularization_target_tolerance,
            "regularization_step_size": self.regularization_step_size,
            "recompute_every": self.recompute_every,
            "workers": self.workers,
        }
        for name, value in positive.items():
            if not value > 0:
                raise ValueError(f"{name} must be positive, got {value}")
        for name in ("max_inner_iterations", "refinement_passes", "rounds", "phase2_max_iterations", "max_backtracks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0 < self.armijo_contraction < 1:
            raise ValueError(f"armijo_contraction must lie in (0, 1), got {self.armijo_contraction}")
        if not 0 < self.armijo_slope < 1:
            raise ValueError(f"armijo_slope must lie in (0, 1), got {self.armijo_slope}")
        return self


@dataclass
class HistoryRecord:
    step: int
    phase: str
    round: int
    sample_index: Optional[int]
    cost: float
    step_size: float
    kernel_residual: float


@dataclass
class PhaseRecord:
    step: int
    phase: str
    round: int
    iterations: int
    u_norm_sq: float


class TuningState:
    """
    微调过程的可变状态

    memorized 中的每个样本在 stacked 中都有对应的 L 块;
    drift_budget[i] = max(2 J^i, 阈值), J^i 取样本 i 进入 memorized 时的代价
    """

    def __init__(self, u: ControlSignal, ensemble: Ensemble, model: ControlledModel, readout: ReadoutMap,
                 config: TunerConfig, memorized: Iterable[int] = (), j: Optional[int] = None):
        if u.p != model.p:
            raise ValueError(f"control has p={u.p}, model expects p={model.p}")
        self.u = u
        self.ensemble = ensemble
        self.model = model
        self.readout = readout
        self.config = config.validate()
        self.memorized: List[int] = []
        self.stacked = StackedConstraints(q_total=ensemble.q, width=u.p * u.N, n_o=ensemble.n_o)
        self.history: List[HistoryRecord] = []
        self.phase_history: List[PhaseRecord] = []
        self.report = TuningReport()
        self.drift_budget: Dict[int, float] = {}
        memorized = sorted(set(memorized))
        self.j = len(memorized) if j is None else j
        self.round = 0
        self._step = 0
        if memorized:
            self.refresh_blocks(memorized)
            self.memorized = memorized
            for index in memorized:
                self.set_budget(index)

    def set_budget(self, index: int):
        self.drift_budget[index] = max(2.0 * self.sample_cost(index), self.config.convergence_cost_threshold)

    def over_budget(self, u: ControlSignal, indices: Iterable[int],
                    budget: Optional[Dict[int, float]] = None) -> Optional[Tuple[int, float]]:
        """第一个代价超出预算的样本 (index, cost); 都在预算内时为 None"""
        budget = self.drift_budget if budget is None else budget
        for index in indices:
            cost_value = self.sample_cost(index, u)
            if cost_value > budget[index]:
                return index, cost_value
        return None

    def next_step(self) -> int:
        self._step += 1
        return self._step

    def compute_jacobians(self, indices: List[int]) -> List[EndpointJacobian]:
        samples = [self.ensemble.sample(index) for index in indices]
        compute = lambda sample: endpoint_jacobian(self.model, self.u, sample, self.readout)
        if self.config.workers > 1 and len(samples) > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as executor:
                return list(executor.map(compute, samples))
        return [compute(sample) for sample in samples]

    def refresh_blocks(self, indices: List[int]):
        """按索引顺序重算并替换约束块"""
        for index, jacobian in zip(indices, self.compute_jacobians(list(indices))):
            self.stacked.update_block(index, jacobian)

    def sample_cost(self, index: int, u: Optional[ControlSignal] = None) -> float:
        return per_sample_cost(self.model, self.u if u is None else u, self.ensemble.sample(index), self.readout).value

    def log_iteration(self, phase: str, sample_index: Optional[int], cost: float, step_size: float,
                      kernel_residual: float):
        self.history.append(HistoryRecord(step=self.next_step(), phase=phase, round=self.round,
                                            sample_index=sample_index, cost=cost, step_size=step_size,
                                            kernel_residual=kernel_residual))

    def log_phase(self, phase: str, iterations: int):
        self.phase_history.append(PhaseRecord(step=self.next_step(), phase=phase, round=self.round,
                                              iterations=iterations, u_norm_sq=self.u.norm_sq()))
        self.report.append_errors(self.round, phase, self.u, self.ensemble, self.j, self.model, self.readout,
                                  iterations=iterations)


def kernel_residual(stacked: StackedConstraints, delta: np.ndarray) -> float:
    """||L_active δu|| / (||L|| ||δu||), δu 不在核中时为正"""
    L = stacked.active_matrix()
    scale = float(np.linalg.norm(L)) * float(np.linalg.norm(delta))
    if L.shape[0] == 0 or scale == 0.0:
        return 0.0
    return float(np.linalg.norm(L @ delta)) / scale


def _projected_step(state: TuningState, index: int, constraints: StackedConstraints, phase: str,
                    objective: Optional[List[int]] = None) -> Tuple[StepResult, float]:
    """
    对样本 index 做一步 u <- u - α P(∇J^i(u)); 返回步结果与步前的目标值

    回溯的目标是 objective 中各样本代价之和 (缺省为 J^i 本身)。候选点使其余已记忆样本
    超出 drift_budget 时不可接受, 继续回溯
    """
    config = state.config
    sample = state.ensemble.sample(index)
    cost, gradient, _ = sample_cost_and_gradient(state.model, state.u, sample, state.readout)
    projector = constraints.projector(config.rank_tolerance)
    direction = projector.project(gradient)
    point = state.u.flat
    objective = [index] if objective is None else list(objective)
    current = cost.value + sum(state.sample_cost(other) for other in objective if other != index)
    guarded = [other for other in state.memorized if other != index]

    def cost_fn(flat):
        candidate = state.u.with_flat(flat)
        if config.armijo and state.over_budget(candidate, guarded) is not None:
            return np.inf
        return sum(state.sample_cost(other, candidate) for other in objective)

    result = descent_step(cost_fn, point, gradient, current, config.step_size, armijo=config.armijo,
                          direction=direction, max_backtracks=config.max_backtracks,
                          contraction=config.armijo_contraction, c=config.armijo_slope)
    if result.accepted:
        delta = result.point - point
        residual = kernel_residual(constraints, delta)
        state.u = state.u.with_flat(result.point)
        state.log_iteration(phase, index, result.cost, result.step_size, residual)
    return result, current


def phase1(state: TuningState, new_indices: Iterable[int]):
    """
    Phase I: 核投影梯度下降

    按顺序处理每个新样本 i: 重复 {重算已记忆样本的 L_ℓ; 重建投影; u <- u - α P(∇J^i(u))}
    直到 J^i(u) <= 阈值或达到迭代上限, 然后把 i 加入 memorized 并记下它的漂移预算。
    回溯找不到既下降又不超出预算的步长时, 该样本记为未收敛
    """
    config = state.config
    new_indices = list(new_indices)
    total_iterations = 0
    for index in tqdm(new_indices, desc="Phase I", disable=not config.verbose):
        if index in state.memorized:
            raise ValueError(f"sample {index} is already memorized")
        iterations = 0
        converged = False
        while True:
            if iterations % config.recompute_every == 0:
                state.refresh_blocks(state.memorized)
            cost_value = state.sample_cost(index)
            if cost_value <= config.convergence_cost_threshold:
                converged = True
                break
            if iterations >= config.max_inner_iterations:
                break
            result, cost_value = _projected_step(state, index, state.stacked, "phase1")
            iterations += 1
            if not result.accepted:
                break
        total_iterations += iterations
        if not converged:
            cost_value = state.sample_cost(index)
            state.report.non_converged[index] = cost_value
            if config.strict:
                raise ConvergenceError(index, iterations, cost_value)
            if config.verbose:
                tqdm.write(f"Phase I: sample {index} not converged after {iterations} iterations (cost={cost_value:.3e})")
        state.memorized = sorted(state.memorized + [index])
        state.set_budget(index)
        state.refresh_blocks([index])
    state.refresh_blocks(state.memorized)
    return total_iterations


def phase2(state: TuningState):
    """
    Phase II: 在核内最小化 ||u||^2

    重复 {重算全部 L_ℓ; 重建投影; u <- u - α P(u)} 直到 ||u||^2 的相对下降量小于阈值。
    已记忆样本的预算取 max(2 J_before, 阈值) 与 drift_budget 中较小者; 候选点超出预算时
    α 乘以 armijo_contraction 后重试, 重试用尽则丢弃该步并停止
    """
    config = state.config
    alpha = config.regularization_step_size
    budget = {
        index: min(max(2.0 * state.sample_cost(index), config.convergence_cost_threshold), state.drift_budget[index])
        for index in state.memorized
    }
    norm_prev = state.u.norm_sq()
    iterations = 0
    for _ in range(config.phase2_max_iterations):
        state.refresh_blocks(state.memorized)
        projector = state.stacked.projector(config.rank_tolerance)
        point = state.u.flat
        direction = projector.project(point)
        for _ in range(config.max_backtracks + 1):
            candidate = state.u.with_flat(point - alpha * direction)
            exceeded = state.over_budget(candidate, state.memorized, budget)
            if exceeded is None:
                break
            alpha *= config.armijo_contraction
        if exceeded is not None:
            index, cost_value = exceeded
            if config.strict:
                raise DriftBudgetError(index, cost_value, budget[index])
            if config.verbose:
                tqdm.write(f"Phase II: drift budget exceeded for sample {index}, step rolled back")
            break

        residual = kernel_residual(state.stacked, candidate.flat - point)
        state.u = candidate
        iterations += 1
        norm_new = state.u.norm_sq()
        state.log_iteration("phase2", None, norm_new, alpha, residual)
        if norm_prev == 0.0 or (norm_prev - norm_new) / norm_prev < config.regularization_target_tolerance:
            break
        norm_prev = norm_new
    state.refresh_blocks(state.memorized)
    return iterations


def phase3(state: TuningState):
    """
    Phase III: 轮换细化

    共 P 遍; 每遍按索引顺序对每个样本 i: 重算 ℓ != i 的 L_ℓ (不更新 i 自己的块),
    用这些块构造投影, u <- u - α P(∇J^i(u))。
    回溯的目标是全体已记忆样本的代价和 (沿投影方向其余样本的一阶变化为零),
    被接受的步不增加 Σ J^ℓ; 历史记录中的 cost 也是这个和
    """
    config = state.config
    iterations = 0
    for _ in range(config.refinement_passes):
        for index in list(state.memorized):
            others = [other for other in state.memorized if other != index]
            state.refresh_blocks(others)
            constraints = state.stacked.restricted([index])
            _projected_step(state, index, constraints, "phase3", objective=state.memorized)
            iterations += 1
    state.refresh_blocks(state.memorized)
    return iterations


def refinement_rounds(state: TuningState, R: int):
    """R 次连续的 (Phase II; Phase III), 每个阶段后记录指标"""
    if R < 0:
        raise ValueError(f"number of rounds must be non-negative, got {R}")
    start = state.round
    for round_ in range(start + 1, start + R + 1):
        state.round = round_
        state.log_phase("phase2", phase2(state))
        state.log_phase("phase3", phase3(state))


def tune_without_forgetting(u0: ControlSignal, ensemble: Ensemble, j: int, model: ControlledModel,
                            readout: ReadoutMap, config: Optional[TunerConfig] = None) -> Tuple[ControlSignal, TuningReport]:
    """
    从记忆了 X^j 的 u0 出发, 学习 x^{j+1}..x^q 且一阶意义下不遗忘 X^j

    结束时检查 X^j 中每个样本的代价是否仍在 max(2 J^i(u0), 阈值) 以内, 超出的样本记入
    report.drift_exceeded (strict 时抛出 DriftBudgetError)

    Returns:
        (u*, TuningReport): 报告包含 round 0 的初始行 (u0), Phase I 行, 以及每轮的 Phase II / III 行
    """
    config = TunerConfig() if config is None else config
    if not 0 <= j <= ensemble.q:
        raise ValueError(f"cutoff j={j} out of range 0..{ensemble.q}")
    state = TuningState(u0, ensemble, model, readout, config, memorized=range(1, j + 1), j=j)
    initial_budget = dict(state.drift_budget)
    not_memorized = [index for index in state.memorized if state.sample_cost(index) > config.convergence_cost_threshold]
    if not_memorized:
        tqdm.write(f"warning: u0 does not memorize samples {not_memorized} to within the convergence threshold")

    state.report.append_errors(0, "initial", u0, ensemble, j, model, readout, iterations=0)
    state.log_phase("phase1", phase1(state, range(j + 1, ensemble.q + 1)))
    refinement_rounds(state, config.rounds)

    for index, budget in initial_budget.items():
        cost_value = state.sample_cost(index)
        if cost_value > budget:
            state.report.drift_exceeded[index] = cost_value
    if state.report.drift_exceeded:
        first = min(state.report.drift_exceeded)
        if config.strict:
            raise DriftBudgetError(first, state.report.drift_exceeded[first], initial_budget[first])
        tqdm.write(f"warning: samples {sorted(state.report.drift_exceeded)} of X^j exceed their drift budget")
    return state.u, state.report
