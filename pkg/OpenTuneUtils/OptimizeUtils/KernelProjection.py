from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional

import numpy as np
import scipy.linalg

from .EndpointJacobian import EndpointJacobian

DEFAULT_RANK_TOLERANCE = 1e-10


@dataclass(frozen=True, eq=False)
class KernelProjector:
    """
    到 N(L) 的正交投影, 以 L 行空间的正交基 Q (r x pN) 表示

    P(g) = g - Q^T (Q g), 不显式构造 pN x pN 投影矩阵
    """
    Q: np.ndarray
    rank_tolerance: float

    @property
    def rank(self) -> int:
        return self.Q.shape[0]

    @property
    def width(self) -> int:
        return self.Q.shape[1]

    def project(self, g) -> np.ndarray:
        g = np.asarray(g, dtype=float).reshape(-1)
        if g.size != self.width:
            raise ValueError(f"vector must have length {self.width}, got {g.size}")
        if self.rank == 0:
            return g.copy()
        return g - self.Q.T @ (self.Q @ g)

    __call__ = project


class StackedConstraints:
    """
    堆叠约束矩阵 L = [L_1; L_2; ...; L_q], 未激活样本对应零行

    行顺序按样本索引; 单写者, 更新任一块都会使投影缓存失效
    """

    def __init__(self, q_total: int, width: int, n_o: int):
        if q_total < 0 or width < 1 or n_o < 1:
            raise ValueError(f"invalid stacked constraint shape q_total={q_total}, width={width}, n_o={n_o}")
        self._q_total = q_total
        self._width = width
        self._n_o = n_o
        self._blocks: Dict[int, EndpointJacobian] = {}
        self._projector_cache: Dict[float, KernelProjector] = {}

    @property
    def q_total(self) -> int:
        return self._q_total

    @property
    def width(self) -> int:
        return self._width

    @property
    def n_o(self) -> int:
        return self._n_o

    @property
    def active_set(self) -> List[int]:
        return sorted(self._blocks)

    @property
    def rows(self) -> List[tuple]:
        return [(index, self._blocks[index]) for index in self.active_set]

    def block(self, sample_index: int) -> Optional[EndpointJacobian]:
        return self._blocks.get(sample_index)

    def update_block(self, sample_index: int, jacobian: EndpointJacobian):
        """替换 (或激活) 样本 sample_index 对应的块"""
        if not 1 <= sample_index <= self._q_total:
            raise IndexError(f"sample index {sample_index} out of range 1..{self._q_total}")
        if jacobian.L.shape != (self._n_o, self._width):
            raise ValueError(f"block must have shape {(self._n_o, self._width)}, got {jacobian.L.shape}")
        self._blocks[sample_index] = jacobian
        self._projector_cache.clear()

    def restricted(self, exclude: Iterable[int]) -> "StackedConstraints":
        """去掉给定样本后的约束 (共享块, 不复制)"""
        exclude = set(exclude)
        stacked = StackedConstraints(self._q_total, self._width, self._n_o)
        stacked._blocks = {index: block for index, block in self._blocks.items() if index not in exclude}
        return stacked

    def active_matrix(self) -> np.ndarray:
        if not self._blocks:
            return np.zeros((0, self._width))
        return np.vstack([self._blocks[index].L for index in self.active_set])

    def matrix(self) -> np.ndarray:
        """完整的 (n_o q_total) x pN 矩阵"""
        L = np.zeros((self._n_o * self._q_total, self._width))
        for index, block in self._blocks.items():
            L[(index - 1) * self._n_o:index * self._n_o] = block.L
        return L

    def projector(self, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> KernelProjector:
        if rank_tolerance not in self._projector_cache:
            self._projector_cache[rank_tolerance] = kernel_projector(self, rank_tolerance)
        return self._projector_cache[rank_tolerance]

    def is_current(self, control_version: int) -> bool:
        return all(block.control_version == control_version for block in self._blocks.values())


def build_stacked(blocks: Iterable[EndpointJacobian], active_set: Iterable[int], q_total: int,
                  width: Optional[int] = None, n_o: Optional[int] = None) -> StackedConstraints:
    """
    由各样本的 L_i 组装堆叠约束矩阵

    Raises:
        ValueError: active_set 中的样本缺少对应块, 或各块宽度 pN 不一致
    """
    blocks = list(blocks)
    by_index = {block.sample_index: block for block in blocks}
    active_set = sorted(set(active_set))
    missing = [index for index in active_set if index not in by_index]
    if missing:
        raise ValueError(f"missing endpoint jacobian blocks for samples {missing}")
    widths = {block.width for block in blocks}
    if len(widths) > 1:
        raise ValueError(f"endpoint jacobian widths differ: {sorted(widths)}")
    n_o_values = {block.n_o for block in blocks}
    if len(n_o_values) > 1:
        raise ValueError(f"endpoint jacobian row counts differ: {sorted(n_o_values)}")
    if blocks:
        width = widths.pop()
        n_o = n_o_values.pop()
    elif width is None:
        raise ValueError("width is required when no blocks are given")
    stacked = StackedConstraints(q_total=q_total, width=width, n_o=n_o if n_o is not None else 1)
    for index in active_set:
        stacked.update_block(index, by_index[index])
    return stacked


def kernel_projector(stacked: StackedConstraints, rank_tolerance: float = DEFAULT_RANK_TOLERANCE) -> KernelProjector:
    """
    奇异值分解求 L 行空间的正交基; 小于 rank_tolerance * σ_max 的奇异值视为零
    """
    if rank_tolerance <= 0:
        raise ValueError(f"rank_tolerance must be positive, got {rank_tolerance}")
    L = stacked.active_matrix()
    if L.shape[0] == 0:
        return KernelProjector(Q=np.zeros((0, stacked.width)), rank_tolerance=rank_tolerance)
    if not np.all(np.isfinite(L)):
        raise ValueError("stacked constraint matrix contains non-finite entries")
    _, singular_values, Vt = scipy.linalg.svd(L, full_matrices=False)
    if singular_values.size == 0 or singular_values[0] == 0.0:
        return KernelProjector(Q=np.zeros((0, stacked.width)), rank_tolerance=rank_tolerance)
    rank = int(np.sum(singular_values > rank_tolerance * singular_values[0]))
    return KernelProjector(Q=Vt[:rank].copy(), rank_tolerance=rank_tolerance)


def project(projector: KernelProjector, g) -> np.ndarray:
    return projector.project(g)
