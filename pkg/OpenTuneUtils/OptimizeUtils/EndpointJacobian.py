from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from ..DynamicsUtils import ControlSignal, ControlledModel, EulerFlow, ReadoutMap, Trajectory
from ..DynamicsUtils import FlowDivergenceError
from ..EnsembleUtils import Sample


class StaleJacobianError(ValueError):
    """端点雅可比矩阵不是由当前控制计算得到的"""

    def __init__(self, expected_version: int, actual_version: int):
        self.expected_version = expected_version
        self.actual_version = actual_version
        super().__init__(
            f"endpoint jacobian computed for control version {actual_version}, "
            f"current control is version {expected_version}"
        )


@dataclass(frozen=True, eq=False)
class EndpointJacobian:
    """
    样本 i 的离散端点雅可比矩阵 L_i (n_o x pN)

    第 ℓ 个列块 (n_o x p) 为 h C Φ_{ℓ+1} ∂f/∂u (u[ℓ], z[ℓ])
    """
    L: np.ndarray
    sample_index: int
    control_version: int

    @property
    def n_o(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]

    def block(self, step: int, p: int) -> np.ndarray:
        return self.L[:, step * p:(step + 1) * p]


@dataclass(frozen=True, eq=False)
class PerSampleCost:
    """J^i(u) = 1/2 ||C φ(u, x^i) - y^i||^2"""
    value: float
    residual: np.ndarray


def state_transition_matrices(model: ControlledModel, u: ControlSignal, trajectory: Trajectory) -> List[np.ndarray]:
    """
    反向递推状态转移矩阵 Φ_N = I, Φ_ℓ = Φ_{ℓ+1} (I + h ∂f/∂x (u[ℓ], z[ℓ]))

    Returns:
        list: [Φ_0, Φ_1, ..., Φ_N], Φ_ℓ 把第 ℓ 步的状态扰动传播到终点
    """
    h = u.h
    identity = np.eye(model.nbar)
    phis = [identity]
    phi = identity
    for step in range(u.N - 1, -1, -1):
        phi = phi @ (identity + h * model.jac_state(u.values[step], trajectory.states[step]))
        phis.append(phi)
    phis.reverse()
    return phis


def _jacobian_from_trajectory(model: ControlledModel, u: ControlSignal, trajectory: Trajectory,
                              readout: ReadoutMap, sample_index: int) -> EndpointJacobian:
    h = u.h
    p = u.p
    identity = np.eye(model.nbar)
    L = np.empty((readout.n_o, p * u.N))
    # C Φ_{ℓ+1}, 从 Φ_N = I 开始反向累乘
    c_phi = readout.C.copy()
    for step in range(u.N - 1, -1, -1):
        x = trajectory.states[step]
        L[:, step * p:(step + 1) * p] = h * (c_phi @ model.jac_control(u.values[step], x))
        c_phi = c_phi @ (identity + h * model.jac_state(u.values[step], x))
    if not np.all(np.isfinite(L)):
        raise FlowDivergenceError("non-finite transition product", sample_index=sample_index)
    L.setflags(write=False)
    return EndpointJacobian(L=L, sample_index=sample_index, control_version=u.version)


def _cost_from_trajectory(trajectory: Trajectory, sample: Sample, readout: ReadoutMap) -> PerSampleCost:
    residual = EulerFlow.readout(readout, trajectory.final) - sample.y
    return PerSampleCost(value=0.5 * float(residual @ residual), residual=residual)


def _trajectory(model: ControlledModel, u: ControlSignal, sample: Sample) -> Trajectory:
    return EulerFlow.flow(model, u, EulerFlow.uplift(sample.x, model.nbar), sample_index=sample.index)


def endpoint_jacobian(model: ControlledModel, u: ControlSignal, sample: Sample, readout: ReadoutMap) -> EndpointJacobian:
    """
    计算样本的端点雅可比矩阵 L_i, 满足
    ||C(φ(u + εδu, x) - φ(u, x)) - ε L δu|| = O(ε^2)
    """
    return _jacobian_from_trajectory(model, u, _trajectory(model, u, sample), readout, sample.index)


def per_sample_cost(model: ControlledModel, u: ControlSignal, sample: Sample, readout: ReadoutMap) -> PerSampleCost:
    return _cost_from_trajectory(_trajectory(model, u, sample), sample, readout)


def cost_gradient(jacobian: EndpointJacobian, residual, control: Optional[ControlSignal] = None) -> np.ndarray:
    """
    ∇J^i = L_i^T (C φ(u, x^i) - y^i), 长度 pN

    Raises:
        StaleJacobianError: 给定 control 时, 其 version 与 L_i 不一致
    """
    if control is not None and control.version != jacobian.control_version:
        raise StaleJacobianError(expected_version=control.version, actual_version=jacobian.control_version)
    residual = np.asarray(residual, dtype=float).reshape(-1)
    if residual.size != jacobian.n_o:
        raise ValueError(f"residual must have length {jacobian.n_o}, got {residual.size}")
    return jacobian.L.T @ residual


def sample_cost_and_gradient(model: ControlledModel, u: ControlSignal, sample: Sample,
                             readout: ReadoutMap) -> Tuple[PerSampleCost, np.ndarray, EndpointJacobian]:
    """一次前向积分同时得到 J^i, ∇J^i 与 L_i"""
    trajectory = _trajectory(model, u, sample)
    cost = _cost_from_trajectory(trajectory, sample, readout)
    jacobian = _jacobian_from_trajectory(model, u, trajectory, readout, sample.index)
    return cost, cost_gradient(jacobian, cost.residual, u), jacobian


def total_cost(model: ControlledModel, u: ControlSignal, samples, readout: ReadoutMap) -> float:
    """Σ_i J^i(u)"""
    return float(sum(per_sample_cost(model, u, sample, readout).value for sample in samples))
