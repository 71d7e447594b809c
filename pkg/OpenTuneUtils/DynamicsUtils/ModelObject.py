from enum import Enum
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np


class FlowDivergenceError(ValueError):
    """
    前向积分中出现非有限值

    Parameters:
        message: 错误信息
        step: 出现非有限值的 Euler 步序号 (未知时为 None)
        sample_index: 对应样本序号 (未知时为 None)
    """

    def __init__(self, message: str, step: Optional[int] = None, sample_index: Optional[int] = None):
        self.step = step
        self.sample_index = sample_index
        details = []
        if step is not None:
            details.append(f"step={step}")
        if sample_index is not None:
            details.append(f"sample={sample_index}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class ModelKind(str, Enum):
    TwoLayerTanh = "TwoLayerTanh"
    ControlAffine = "ControlAffine"


@dataclass(frozen=True)
class VectorField:
    """控制仿射系统中的一个光滑向量场 f_d 及其雅可比矩阵"""
    value: Callable[[np.ndarray], np.ndarray]  # x -> f_d(x), 长度 nbar
    jacobian: Callable[[np.ndarray], np.ndarray]  # x -> ∂f_d/∂x, nbar x nbar


def linear_field(A) -> VectorField:
    """f(x) = A x"""
    A = np.array(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"linear field needs a square matrix, got shape {A.shape}")
    return VectorField(value=lambda x: A @ x, jacobian=lambda x: A.copy())


def constant_field(b) -> VectorField:
    """f(x) = b"""
    b = np.array(b, dtype=float).reshape(-1)
    zeros = np.zeros((b.size, b.size))
    return VectorField(value=lambda x: b.copy(), jacobian=lambda x: zeros.copy())


@dataclass
class ModelConfig:
    """
    受控模型族的配置

    Args:
        kind: TwoLayerTanh (x' = W2 tanh(W1 x + b1) + b2) 或 ControlAffine (x' = Σ u_d f_d(x))
        nbar: 提升后的状态维数
        vector_fields: ControlAffine 的向量场列表, p = len(vector_fields)
    """
    kind: ModelKind
    nbar: int
    vector_fields: List[VectorField] = field(default_factory=list)

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        if self.nbar < 1:
            raise ValueError(f"nbar must be >= 1, got {self.nbar}")
        if self.kind == ModelKind.ControlAffine and not self.vector_fields:
            raise ValueError("ControlAffine model needs at least one vector field")
        if self.kind == ModelKind.TwoLayerTanh and self.vector_fields:
            raise ValueError("TwoLayerTanh model takes no vector fields")

    @property
    def p(self) -> int:
        if self.kind == ModelKind.TwoLayerTanh:
            return 2 * self.nbar * self.nbar + 2 * self.nbar
        return len(self.vector_fields)


class ControlledModel:
    """
    受控系统 x' = f(u, x) 的右端项及其关于状态、控制的解析雅可比矩阵

    TwoLayerTanh 的控制向量布局固定为 [vec(W1) 行优先 | b1 | vec(W2) 行优先 | b2]
    """

    def __init__(self, config: ModelConfig):
        self._config = config

    @classmethod
    def two_layer_tanh(cls, nbar: int) -> "ControlledModel":
        return cls(ModelConfig(kind=ModelKind.TwoLayerTanh, nbar=nbar))

    @classmethod
    def control_affine(cls, vector_fields: List[VectorField], nbar: int) -> "ControlledModel":
        return cls(ModelConfig(kind=ModelKind.ControlAffine, nbar=nbar, vector_fields=list(vector_fields)))

    @property
    def config(self) -> ModelConfig:
        return self._config

    @property
    def kind(self) -> ModelKind:
        return self._config.kind

    @property
    def nbar(self) -> int:
        return self._config.nbar

    @property
    def p(self) -> int:
        return self._config.p

    @staticmethod
    def vectorize(W1, b1, W2, b2) -> np.ndarray:
        """(W1, b1, W2, b2) -> 长度 2 nbar^2 + 2 nbar 的控制向量"""
        W1 = np.asarray(W1, dtype=float)
        W2 = np.asarray(W2, dtype=float)
        b1 = np.asarray(b1, dtype=float).reshape(-1)
        b2 = np.asarray(b2, dtype=float).reshape(-1)
        nbar = b1.size
        if W1.shape != (nbar, nbar) or W2.shape != (nbar, nbar) or b2.size != nbar:
            raise ValueError(
                f"inconsistent shapes: W1 {W1.shape}, b1 {b1.shape}, W2 {W2.shape}, b2 {b2.shape}"
            )
        return np.concatenate([W1.reshape(-1), b1, W2.reshape(-1), b2])

    @staticmethod
    def devectorize(u_step: np.ndarray, nbar: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        u_step = np.asarray(u_step, dtype=float).reshape(-1)
        m = nbar * nbar
        if u_step.size != 2 * m + 2 * nbar:
            raise ValueError(f"expected control step of length {2 * m + 2 * nbar}, got {u_step.size}")
        W1 = u_step[:m].reshape(nbar, nbar)
        b1 = u_step[m:m + nbar]
        W2 = u_step[m + nbar:2 * m + nbar].reshape(nbar, nbar)
        b2 = u_step[2 * m + nbar:]
        return W1, b1, W2, b2

    def _check(self, u_step: np.ndarray, x: np.ndarray):
        if u_step.shape != (self.p,):
            raise ValueError(f"control step must have length {self.p}, got shape {u_step.shape}")
        if x.shape != (self.nbar,):
            raise ValueError(f"state must have length {self.nbar}, got shape {x.shape}")

    def eval_rhs(self, u_step, x) -> np.ndarray:
        """计算 f(u, x)；出现非有限值时抛出 FlowDivergenceError"""
        u_step = np.asarray(u_step, dtype=float)
        x = np.asarray(x, dtype=float)
        self._check(u_step, x)
        if self.kind == ModelKind.TwoLayerTanh:
            W1, b1, W2, b2 = self.devectorize(u_step, self.nbar)
            value = W2 @ np.tanh(W1 @ x + b1) + b2
        else:
            value = np.zeros(self.nbar)
            for u_d, vf in zip(u_step, self._config.vector_fields):
                value = value + u_d * np.asarray(vf.value(x), dtype=float)
        if not np.all(np.isfinite(value)):
            raise FlowDivergenceError("non-finite vector field value")
        return value

    def jac_state(self, u_step, x) -> np.ndarray:
        """∂f/∂x, nbar x nbar"""
        u_step = np.asarray(u_step, dtype=float)
        x = np.asarray(x, dtype=float)
        self._check(u_step, x)
        if self.kind == ModelKind.TwoLayerTanh:
            W1, b1, W2, b2 = self.devectorize(u_step, self.nbar)
            s = np.tanh(W1 @ x + b1)
            return (W2 * (1.0 - s * s)) @ W1
        jac = np.zeros((self.nbar, self.nbar))
        for u_d, vf in zip(u_step, self._config.vector_fields):
            jac = jac + u_d * np.asarray(vf.jacobian(x), dtype=float)
        return jac

    def jac_control(self, u_step, x) -> np.ndarray:
        """∂f/∂u, nbar x p"""
        u_step = np.asarray(u_step, dtype=float)
        x = np.asarray(x, dtype=float)
        self._check(u_step, x)
        if self.kind == ModelKind.ControlAffine:
            return np.column_stack([np.asarray(vf.value(x), dtype=float) for vf in self._config.vector_fields])
        nbar = self.nbar
        W1, b1, W2, b2 = self.devectorize(u_step, nbar)
        s = np.tanh(W1 @ x + b1)
        W2d = W2 * (1.0 - s * s)
        # 列块顺序与 vectorize 的布局一致
        d_W1 = np.kron(W2d, x[None, :])
        d_W2 = np.kron(np.eye(nbar), s[None, :])
        return np.hstack([d_W1, W2d, d_W2, np.eye(nbar)])
