from dataclasses import dataclass
from typing import Iterator, List, Tuple

import numpy as np

from ..DynamicsUtils import ControlSignal, ControlledModel, EulerFlow, ReadoutMap


@dataclass(frozen=True, eq=False)
class Sample:
    """成对样本 (x^i, y^i), index 为在全局索引集 I 中的位置 (从 1 开始)"""
    x: np.ndarray
    y: np.ndarray
    index: int

    def __post_init__(self):
        x = np.array(self.x, dtype=float).reshape(-1)
        y = np.array(self.y, dtype=float).reshape(-1)
        if x.size < 1 or y.size < 1:
            raise ValueError("sample input and label must be non-empty")
        if self.index < 1:
            raise ValueError(f"sample index must be positive, got {self.index}")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)


class Ensemble:
    """
    有序的成对训练集 (X, Y)

    构造时检查: 维度一致, 索引依次为 1..q, 输入点两两不同
    """

    def __init__(self, samples: List[Sample]):
        samples = list(samples)
        if not samples:
            raise ValueError("ensemble needs at least one sample")
        n = samples[0].x.size
        n_o = samples[0].y.size
        for position, sample in enumerate(samples, start=1):
            if sample.x.size != n or sample.y.size != n_o:
                raise ValueError(f"sample {sample.index} has inconsistent dimensions")
            if sample.index != position:
                raise ValueError(f"sample indices must be 1..q in order, found {sample.index} at position {position}")
        inputs = np.vstack([sample.x for sample in samples])
        _, unique_count = np.unique(inputs, axis=0, return_counts=True)
        if np.any(unique_count > 1):
            raise ValueError("ensemble inputs must be pairwise distinct")
        self._samples = samples
        self._n = n
        self._n_o = n_o

    @classmethod
    def from_arrays(cls, X, Y) -> "Ensemble":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.asarray(Y, dtype=float)
        Y = Y.reshape(X.shape[0], -1)
        return cls([Sample(x=x, y=y, index=i) for i, (x, y) in enumerate(zip(X, Y), start=1)])

    @property
    def samples(self) -> List[Sample]:
        return self._samples

    @property
    def n(self) -> int:
        return self._n

    @property
    def n_o(self) -> int:
        return self._n_o

    @property
    def q(self) -> int:
        return len(self._samples)

    def __len__(self):
        return len(self._samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self._samples)

    def sample(self, index: int) -> Sample:
        """按全局索引 (1..q) 取样本"""
        if not 1 <= index <= self.q:
            raise IndexError(f"sample index {index} out of range 1..{self.q}")
        return self._samples[index - 1]

    def view(self, j: int = None, i: int = None) -> "SubEnsembleView":
        """前缀 X^j (j 给出, i 省略) 或差集 X^i_j = {x^ℓ : j < ℓ <= i}"""
        if j is None:
            j = self.q
        if i is None:
            return SubEnsembleView(parent=self, lower=0, upper=j)
        return SubEnsembleView(parent=self, lower=j, upper=i)


@dataclass(frozen=True)
class SubEnsembleView:
    """索引区间 (lower, upper] 上的子集合; lower = 0 时为前缀 X^upper"""
    parent: Ensemble
    lower: int
    upper: int

    def __post_init__(self):
        if not 0 <= self.lower <= self.upper <= self.parent.q:
            raise ValueError(
                f"invalid sub-ensemble range ({self.lower}, {self.upper}] for q={self.parent.q}"
            )

    @property
    def indices(self) -> List[int]:
        return list(range(self.lower + 1, self.upper + 1))

    @property
    def samples(self) -> List[Sample]:
        return [self.parent.sample(index) for index in self.indices]

    def __len__(self):
        return self.upper - self.lower

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def is_empty(self) -> bool:
        return self.upper == self.lower


def split(ensemble: Ensemble, j: int) -> Tuple[SubEnsembleView, SubEnsembleView]:
    """X -> (X^j, X^q_j)"""
    if not 0 <= j <= ensemble.q:
        raise ValueError(f"cutoff j={j} out of range 0..{ensemble.q}")
    return ensemble.view(j), ensemble.view(j, ensemble.q)


def residual_norms(u: ControlSignal, view, model: ControlledModel, readout: ReadoutMap) -> np.ndarray:
    """每个样本的端点残差 ||C φ(u, x^i) - y^i||"""
    norms = []
    for sample in view:
        endpoint = EulerFlow.endpoint(model, u, sample.x, readout, sample_index=sample.index)
        norms.append(float(np.linalg.norm(endpoint - sample.y)))
    return np.array(norms)


def average_error(u: ControlSignal, view, model: ControlledModel, readout: ReadoutMap) -> float:
    """
    平均误差 E(u, X) = (1/|X|) Σ ||C φ(u, x^i) - y^i||

    Raises:
        ValueError: 空的子集合
    """
    if len(view) == 0:
        raise ValueError("average error is undefined on an empty view")
    return float(np.mean(residual_norms(u, view, model, readout)))
