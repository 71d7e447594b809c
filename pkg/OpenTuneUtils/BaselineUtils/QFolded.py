from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np
import scipy.linalg
from tqdm import tqdm

from ..DynamicsUtils import ControlSignal, ControlledModel, EulerFlow, ReadoutMap
from ..EnsembleUtils import Ensemble
from ..OptimizeUtils import ConvergenceError, per_sample_cost, sample_cost_and_gradient
from ..OptimizeUtils.LineSearch import ARMIJO_CONTRACTION, ARMIJO_SLOPE, MAX_BACKTRACKS, descent_step


@dataclass
class QFoldedConfig:
    """
    q-folded 联合训练的参数

    Args:
        regularization: 代价中 μ h Σ||u[ℓ]||^2 的系数 μ
        convergence_cost_threshold: 所有样本 J^i <= 阈值时停止
        init_std: 随机初始化的标准差, None 表示 0.1 / sqrt(nbar)
    """
    step_size: float = 2.0
    armijo: bool = True
    armijo_contraction: float = ARMIJO_CONTRACTION
    armijo_slope: float = ARMIJO_SLOPE
    max_backtracks: int = MAX_BACKTRACKS
    regularization: float = 1e-3
    convergence_cost_threshold: float = 1e-4
    max_iterations: int = 3000
    N: int = 10
    T: float = 1.0
    init_std: Optional[float] = None
    strict: bool = False
    workers: int = 1
    verbose: bool = False

    def validate(self) -> "QFoldedConfig":
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.regularization < 0:
            raise ValueError(f"regularization must be non-negative, got {self.regularization}")
        if self.convergence_cost_threshold < 0:
            raise ValueError(f"convergence_cost_threshold must be non-negative, got {self.convergence_cost_threshold}")
        if self.max_iterations < 0:
            raise ValueError(f"max_iterations must be non-negative, got {self.max_iterations}")
        if self.N < 1 or not self.T > 0:
            raise ValueError(f"invalid time grid N={self.N}, T={self.T}")
        if self.init_std is not None and self.init_std < 0:
            raise ValueError(f"init_std must be non-negative, got {self.init_std}")
        if self.workers < 1:
            raise ValueError(f"workers must be positive, got {self.workers}")
        return self


@dataclass
class TrainingResult:
    control: ControlSignal
    iterations: int
    converged: bool
    curve: List[Tuple[int, float, float]] = field(default_factory=list)  # (iteration, cost, avg_error)
    final_cost: float = float("nan")

    def curve_csv_string(self) -> str:
        lines = ["iteration,cost,avg_error"]
        for iteration, cost, error in self.curve:
            lines.append(f"{iteration},{cost!r},{error!r}")
        return "\n".join(lines) + "\n"

    def write_curve(self, filename):
        with open(filename, 'w') as file:
            file.write(self.curve_csv_string())


@dataclass(eq=False)
class ObjectiveValue:
    cost: float
    gradient: np.ndarray
    sample_costs: np.ndarray
    residual_norms: np.ndarray

    @property
    def avg_error(self) -> float:
        return float(np.mean(self.residual_norms)) if self.residual_norms.size else 0.0


class EnsembleObjective:
    """
    数据项 Σ_i J^i(u) 加上一个二次正则项

    regularizer(u) 返回 (值, 梯度); 梯度按样本索引顺序逐个累加, 与线程数无关
    """

    def __init__(self, samples, model: ControlledModel, readout: ReadoutMap,
                 regularizer: Optional[Callable[[ControlSignal], Tuple[float, np.ndarray]]] = None, workers: int = 1):
        self.samples = list(samples)
        if not self.samples:
            raise ValueError("ensemble objective needs at least one sample")
        self.model = model
        self.readout = readout
        self.regularizer = regularizer
        self.workers = workers

    def _map(self, function):
        if self.workers > 1 and len(self.samples) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                return list(executor.map(function, self.samples))
        return [function(sample) for sample in self.samples]

    def cost(self, u: ControlSignal) -> float:
        values = self._map(lambda sample: per_sample_cost(self.model, u, sample, self.readout).value)
        total = sum(values)
        if self.regularizer is not None:
            total = total + self.regularizer(u)[0]
        return total

    def evaluate(self, u: ControlSignal) -> ObjectiveValue:
        terms = self._map(lambda sample: sample_cost_and_gradient(self.model, u, sample, self.readout))
        gradient = np.zeros(u.p * u.N)
        for _, sample_gradient, _ in terms:
            gradient = gradient + sample_gradient
        sample_costs = np.array([cost.value for cost, _, _ in terms])
        total = sum(cost.value for cost, _, _ in terms)
        if self.regularizer is not None:
            value, regularizer_gradient = self.regularizer(u)
            total = total + value
            gradient = gradient + regularizer_gradient
        return ObjectiveValue(cost=total, gradient=gradient, sample_costs=sample_costs,
                              residual_norms=np.array([float(np.linalg.norm(cost.residual)) for cost, _, _ in terms]))


def norm_regularizer(coefficient: float, center: Optional[ControlSignal] = None):
    """coefficient * h * Σ||u[ℓ] - center[ℓ]||^2 及其梯度"""

    def regularizer(u: ControlSignal) -> Tuple[float, np.ndarray]:
        diff = u.flat if center is None else u.flat - center.flat
        return coefficient * u.h * float(diff @ diff), 2.0 * coefficient * u.h * diff

    return regularizer


def gradient_descent(objective: EnsembleObjective, u: ControlSignal, step_size: float, max_iterations: int,
                     convergence_cost_threshold: float, armijo: bool = True,
                     contraction: float = ARMIJO_CONTRACTION, c: float = ARMIJO_SLOPE,
                     max_backtracks: int = MAX_BACKTRACKS, verbose: bool = False,
                     desc: str = "descent") -> TrainingResult:
    """
    u <- u - α ∇J(u), 直到所有样本的 J^i <= 阈值, 迭代次数用尽, 或回溯失败

    curve 的第 0 行对应初始控制
    """
    curve = []
    iterations = 0
    converged = False
    value = objective.evaluate(u)
    with tqdm(total=max_iterations, desc=desc, disable=not verbose) as progress:
        while True:
            curve.append((iterations, value.cost, value.avg_error))
            if float(np.max(value.sample_costs)) <= convergence_cost_threshold:
                converged = True
                break
            if iterations >= max_iterations:
                break
            current = u
            result = descent_step(lambda flat: objective.cost(current.with_flat(flat)), u.flat, value.gradient,
                                  value.cost, step_size, armijo=armijo, max_backtracks=max_backtracks,
                                  contraction=contraction, c=c)
            if not result.accepted:
                if verbose:
                    tqdm.write(f"{desc}: line search stalled at iteration {iterations} (cost={value.cost:.3e})")
                break
            u = u.with_flat(result.point)
            iterations += 1
            progress.update(1)
            value = objective.evaluate(u)
    return TrainingResult(control=u, iterations=iterations, converged=converged, curve=curve, final_cost=value.cost)


class QFoldedProblem:
    """
    q-folded 系统: 把 q 个样本堆叠为 nbar*q 维状态, 由同一个控制 u 驱动

    X0 = [E(x^1); ...; E(x^q)], Y = [y^1; ...; y^q], Λ(C) = diag(C, ..., C)
    """

    def __init__(self, samples, model: ControlledModel, readout: ReadoutMap):
        self.samples = list(samples)
        if not self.samples:
            raise ValueError("q-folded problem needs at least one sample")
        self.model = model
        self.readout = readout
        self.X0 = np.concatenate([EulerFlow.uplift(sample.x, model.nbar) for sample in self.samples])
        self.Y = np.concatenate([sample.y for sample in self.samples])
        self.Lambda = scipy.linalg.block_diag(*[readout.C] * len(self.samples))

    @property
    def q(self) -> int:
        return len(self.samples)

    def _blocks(self, X: np.ndarray) -> List[np.ndarray]:
        nbar = self.model.nbar
        return [X[k * nbar:(k + 1) * nbar] for k in range(self.q)]

    def stacked_rhs(self, u_step, X) -> np.ndarray:
        """F(u, X) = [f(u, x_1); ...; f(u, x_q)]"""
        return np.concatenate([self.model.eval_rhs(u_step, x) for x in self._blocks(X)])

    def stacked_flow(self, u: ControlSignal) -> np.ndarray:
        """堆叠系统的 Euler 轨迹, 形状 (N+1) x (nbar q)"""
        states = np.empty((u.N + 1, self.X0.size))
        states[0] = self.X0
        for step in range(u.N):
            states[step + 1] = states[step] + u.h * self.stacked_rhs(u.values[step], states[step])
        return states

    def stacked_cost(self, u: ControlSignal, regularization: float = 0.0) -> float:
        """1/2 ||Λ(C) X_N - Y||^2 + μ h Σ||u[ℓ]||^2"""
        residual = self.Lambda @ self.stacked_flow(u)[-1] - self.Y
        return 0.5 * float(residual @ residual) + regularization * u.h * float(np.sum(u.values * u.values))

    def stacked_gradient(self, u: ControlSignal, regularization: float = 0.0) -> np.ndarray:
        """
        稠密伴随法求 stacked_cost 的梯度

        每一步构造 (nbar q) x (nbar q) 的块对角状态雅可比矩阵并做一次稠密乘法, 每次迭代 O(nbar^2 q^2 N)
        """
        states = self.stacked_flow(u)
        h = u.h
        p = u.p
        gradient = np.empty(u.N * p)
        adjoint = self.Lambda.T @ (self.Lambda @ states[-1] - self.Y)
        for step in range(u.N - 1, -1, -1):
            blocks = self._blocks(states[step])
            A = scipy.linalg.block_diag(*[self.model.jac_state(u.values[step], x) for x in blocks])
            B = np.vstack([self.model.jac_control(u.values[step], x) for x in blocks])
            gradient[step * p:(step + 1) * p] = h * (B.T @ adjoint)
            adjoint = adjoint + h * (A.T @ adjoint)
        return gradient + 2.0 * regularization * h * u.flat


def initial_control(nbar: int, p: int, N: int, seed: int, std: Optional[float] = None, T: float = 1.0) -> ControlSignal:
    """逐元素高斯初始化, 标准差缺省为 0.1 / sqrt(nbar)"""
    return ControlSignal.random_normal(N, p, 0.1 / np.sqrt(nbar) if std is None else std, seed, T=T)


def qfolded_train(ensemble, model: ControlledModel, readout: ReadoutMap, config: Optional[QFoldedConfig] = None,
                  seed: int = 0, u_init: Optional[ControlSignal] = None) -> TrainingResult:
    """
    在堆叠代价 Σ_i J^i(u) + μ h Σ||u[ℓ]||^2 上对共享控制 u 做梯度下降

    Args:
        ensemble: Ensemble 或 SubEnsembleView
        seed: u_init 缺省时的初始化种子

    Raises:
        ConvergenceError: strict 模式下未收敛
    """
    config = QFoldedConfig() if config is None else config.validate()
    samples = list(ensemble)
    if not samples:
        raise ValueError("q-folded training needs a nonempty ensemble")
    if u_init is None:
        u_init = initial_control(model.nbar, model.p, config.N, seed, config.init_std, config.T)
    objective = EnsembleObjective(samples, model, readout, regularizer=norm_regularizer(config.regularization),
                                  workers=config.workers)
    result = gradient_descent(objective, u_init, config.step_size, config.max_iterations,
                              config.convergence_cost_threshold, armijo=config.armijo,
                              contraction=config.armijo_contraction, c=config.armijo_slope,
                              max_backtracks=config.max_backtracks, verbose=config.verbose, desc="q-folded")
    if not result.converged:
        if config.strict:
            raise ConvergenceError(None, result.iterations, result.final_cost)
        if config.verbose:
            tqdm.write(f"q-folded: not converged after {result.iterations} iterations (cost={result.final_cost:.3e})")
    return result
