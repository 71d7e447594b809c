import itertools
from dataclasses import dataclass, field

import numpy as np

_VERSION_COUNTER = itertools.count(1)


@dataclass(frozen=True, eq=False)
class ControlSignal:
    """
    分段常值控制 u, 形状 N x p, 在 [0, T] 的均匀网格上取值

    每个实例在构造时获得唯一的 version, 用于判断端点雅可比矩阵是否过期
    """
    values: np.ndarray
    T: float = 1.0
    version: int = field(default_factory=lambda: next(_VERSION_COUNTER))

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError(f"control values must be an N x p array, got shape {values.shape}")
        if values.shape[0] < 1:
            raise ValueError("control needs at least one time step")
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "T", float(self.T))

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def flat(self) -> np.ndarray:
        """长度 pN 的向量, 第 ℓ 个长度为 p 的块对应 u[ℓ]"""
        return self.values.reshape(-1).copy()

    @classmethod
    def from_flat(cls, vector, N: int, p: int, T: float = 1.0) -> "ControlSignal":
        vector = np.asarray(vector, dtype=float)
        if vector.size != N * p:
            raise ValueError(f"expected {N * p} control entries, got {vector.size}")
        return cls(values=vector.reshape(N, p), T=T)

    @classmethod
    def zeros(cls, N: int, p: int, T: float = 1.0) -> "ControlSignal":
        return cls(values=np.zeros((N, p)), T=T)

    @classmethod
    def random_normal(cls, N: int, p: int, std: float, seed: int, T: float = 1.0) -> "ControlSignal":
        rng = np.random.default_rng(seed)
        return cls(values=rng.normal(0.0, std, size=(N, p)), T=T)

    def with_flat(self, vector) -> "ControlSignal":
        """返回同一网格上的新控制"""
        return ControlSignal.from_flat(vector, self.N, self.p, self.T)

    def norm_sq(self) -> float:
        """离散 L2 范数平方 h * Σ ||u[ℓ]||^2"""
        return float(self.h * np.sum(self.values * self.values))

    def distance_sq(self, other: "ControlSignal") -> float:
        if other.values.shape != self.values.shape:
            raise ValueError(f"control shapes differ: {self.values.shape} vs {other.values.shape}")
        diff = self.values - other.values
        return float(self.h * np.sum(diff * diff))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """离散轨迹 x_0..x_N, states[0] 为提升后的初始点"""
    states: np.ndarray
    h: float

    @property
    def N(self) -> int:
        return self.states.shape[0] - 1

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]
