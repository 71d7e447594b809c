from dataclasses import dataclass
from typing import Optional

import numpy as np

from .ControlObject import ControlSignal, Trajectory
from .ModelObject import ControlledModel, FlowDivergenceError


@dataclass(frozen=True, eq=False)
class ReadoutMap:
    """
    读出映射 R(x) = C x, C 为 n_o x nbar 的固定矩阵

    标准形式为 C = [0 | I], 即读取状态的最后 n_o 个坐标
    """
    C: np.ndarray

    def __post_init__(self):
        C = np.array(self.C, dtype=float)
        if C.ndim == 1:
            C = C[None, :]
        if C.ndim != 2 or C.shape[0] < 1 or C.shape[0] > C.shape[1]:
            raise ValueError(f"readout matrix must be n_o x nbar with n_o <= nbar, got shape {C.shape}")
        if np.linalg.matrix_rank(C) != C.shape[0]:
            raise ValueError("readout matrix must have full row rank")
        C.setflags(write=False)
        object.__setattr__(self, "C", C)

    @classmethod
    def canonical(cls, n_o: int, nbar: int) -> "ReadoutMap":
        if not 1 <= n_o <= nbar:
            raise ValueError(f"need 1 <= n_o <= nbar, got n_o={n_o}, nbar={nbar}")
        return cls(C=np.hstack([np.zeros((n_o, nbar - n_o)), np.eye(n_o)]))

    @classmethod
    def identity(cls, nbar: int) -> "ReadoutMap":
        return cls(C=np.eye(nbar))

    @property
    def n_o(self) -> int:
        return self.C.shape[0]

    @property
    def nbar(self) -> int:
        return self.C.shape[1]


class EulerFlow:
    """提升映射、读出映射与显式 Euler 流"""

    @staticmethod
    def uplift(x, nbar: int) -> np.ndarray:
        """零填充提升: x -> [x, 0, ..., 0] (长度 nbar)"""
        x = np.asarray(x, dtype=float).reshape(-1)
        if nbar < x.size:
            raise ValueError(f"nbar ({nbar}) must be >= input dimension ({x.size})")
        lifted = np.zeros(nbar)
        lifted[:x.size] = x
        return lifted

    @staticmethod
    def readout(readout_map, xbar) -> np.ndarray:
        C = readout_map.C if isinstance(readout_map, ReadoutMap) else np.atleast_2d(np.asarray(readout_map, dtype=float))
        xbar = np.asarray(xbar, dtype=float).reshape(-1)
        if C.shape[1] != xbar.size:
            raise ValueError(f"readout expects a state of length {C.shape[1]}, got {xbar.size}")
        return C @ xbar

    @staticmethod
    def flow(model: ControlledModel, u: ControlSignal, x0_lifted, sample_index: Optional[int] = None) -> Trajectory:
        """
        显式 Euler 积分 x_{ℓ+1} = x_ℓ + h f(u[ℓ], x_ℓ), ℓ = 0..N-1

        Args:
            model: 受控模型
            u: 控制 (N x p)
            x0_lifted: 提升后的初始点 (长度 nbar)
            sample_index: 仅用于错误信息

        Returns:
            Trajectory: 全部 N+1 个状态

        Raises:
            FlowDivergenceError: 某一步出现非有限状态
        """
        x0 = np.asarray(x0_lifted, dtype=float).reshape(-1)
        if x0.size != model.nbar:
            raise ValueError(f"initial state must have length {model.nbar}, got {x0.size}")
        if u.p != model.p:
            raise ValueError(f"control has p={u.p}, model expects p={model.p}")
        h = u.h
        states = np.empty((u.N + 1, model.nbar))
        states[0] = x0
        for step in range(u.N):
            try:
                rhs = model.eval_rhs(u.values[step], states[step])
            except FlowDivergenceError:
                raise FlowDivergenceError("non-finite vector field value", step=step, sample_index=sample_index)
            states[step + 1] = states[step] + h * rhs
            if not np.all(np.isfinite(states[step + 1])):
                raise FlowDivergenceError("non-finite state", step=step, sample_index=sample_index)
        states.setflags(write=False)
        return Trajectory(states=states, h=h)

    @staticmethod
    def endpoint(model: ControlledModel, u: ControlSignal, x, readout_map: ReadoutMap,
                 sample_index: Optional[int] = None) -> np.ndarray:
        """端点映射 R(φ_T(u, E(x)))"""
        trajectory = EulerFlow.flow(model, u, EulerFlow.uplift(x, model.nbar), sample_index=sample_index)
        return EulerFlow.readout(readout_map, trajectory.final)
