from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..DynamicsUtils import FlowDivergenceError

ARMIJO_CONTRACTION = 0.5
ARMIJO_SLOPE = 1e-4
MAX_BACKTRACKS = 40


@dataclass
class StepResult:
    accepted: bool
    step_size: float
    point: np.ndarray
    cost: float
    backtracks: int


def armijo_backtracking(cost_fn: Callable[[np.ndarray], float], point: np.ndarray, direction: np.ndarray,
                        slope: float, current_cost: float, initial_step: float,
                        contraction: float = ARMIJO_CONTRACTION, c: float = ARMIJO_SLOPE,
                        max_backtracks: int = MAX_BACKTRACKS, enabled: bool = True) -> StepResult:
    """
    沿 point - α direction 的回溯线搜索

    接受条件 cost(point - α d) <= current_cost - c α slope, 其中 slope = <∇J, d> >= 0。
    enabled=False 时直接采用 initial_step (常数步长)。

    Returns:
        StepResult: accepted=False 表示回溯次数用尽或 direction 不是下降方向, point 保持不变
    """
    step = float(initial_step)
    if not enabled:
        candidate = point - step * direction
        return StepResult(accepted=True, step_size=step, point=candidate, cost=cost_fn(candidate), backtracks=0)

    if not slope > 0:
        return StepResult(accepted=False, step_size=0.0, point=point, cost=current_cost, backtracks=0)
    for backtracks in range(max_backtracks + 1):
        candidate = point - step * direction
        try:
            cost = cost_fn(candidate)
        except FlowDivergenceError:
            cost = np.inf
        if cost <= current_cost - c * step * slope:
            return StepResult(accepted=True, step_size=step, point=candidate, cost=cost, backtracks=backtracks)
        step *= contraction
    return StepResult(accepted=False, step_size=0.0, point=point, cost=current_cost, backtracks=max_backtracks)


def descent_step(cost_fn: Callable[[np.ndarray], float], point: np.ndarray, gradient: np.ndarray,
                 current_cost: float, step_size: float, armijo: bool = True,
                 direction: Optional[np.ndarray] = None, max_backtracks: int = MAX_BACKTRACKS,
                 contraction: float = ARMIJO_CONTRACTION, c: float = ARMIJO_SLOPE) -> StepResult:
    """梯度 (或投影梯度) 下降一步; direction 缺省时为 gradient 本身"""
    if direction is None:
        direction = gradient
    slope = float(gradient @ direction)
    return armijo_backtracking(cost_fn, point, direction, slope, current_cost, step_size,
                               contraction=contraction, c=c, max_backtracks=max_backtracks, enabled=armijo)
