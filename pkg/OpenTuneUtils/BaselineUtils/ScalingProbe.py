import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from tqdm import tqdm

from ..DynamicsUtils import ControlSignal, ControlledModel, ReadoutMap, linear_field
from ..EnsembleUtils import BallDataset
from .QFolded import QFoldedProblem

TIMING_COLUMNS = ["n", "q", "N", "seconds_per_iteration"]


@dataclass
class ProbeConfig:
    """
    q-folded 每次迭代耗时的测量参数

    模型为 ẋ = Σ_d u_d A_d x (控制仿射, 线性向量场), 每个 q 取 repeats 次测量的最小值
    """
    fields: int = 2
    iterations: int = 2
    repeats: int = 3
    seed: int = 0
    verbose: bool = False

    def validate(self) -> "ProbeConfig":
        for name in ("fields", "iterations", "repeats"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        return self


def probe_model(nbar: int, fields: int, seed: int) -> ControlledModel:
    rng = np.random.default_rng(seed)
    matrices = [rng.normal(0.0, 1.0 / np.sqrt(nbar), size=(nbar, nbar)) for _ in range(fields)]
    return ControlledModel.control_affine([linear_field(A) for A in matrices], nbar)


def time_gradient_iteration(problem: QFoldedProblem, u: ControlSignal, iterations: int, repeats: int) -> float:
    """一次稠密 q-folded 梯度计算的墙钟时间 (秒), 取 repeats 次中的最小值"""
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(iterations):
            problem.stacked_gradient(u)
        best = min(best, (time.perf_counter() - start) / iterations)
    return float(best)


def qfolded_iteration_cost_probe(n_list: Sequence[int], q_list: Sequence[int], N: int,
                                 config: Optional[ProbeConfig] = None) -> pd.DataFrame:
    """
    测量不同 (nbar, q) 下 q-folded 每次梯度迭代的耗时

    Returns:
        pd.DataFrame: 列 n, q, N, seconds_per_iteration, 按 (n, q) 排序
    """
    config = ProbeConfig() if config is None else config.validate()
    if N < 1:
        raise ValueError(f"N must be positive, got {N}")
    grid = [(int(nbar), int(q)) for nbar in sorted(set(n_list)) for q in sorted(set(q_list))]
    if not grid:
        raise ValueError("scaling probe needs at least one n and one q value")
    rows = []
    for nbar, q in tqdm(grid, desc="scaling", disable=not config.verbose):
        model = probe_model(nbar, config.fields, config.seed)
        ensemble = BallDataset.generate(q, config.seed)
        readout = ReadoutMap.canonical(ensemble.n_o, nbar)
        u = ControlSignal.random_normal(N, model.p, 1.0, config.seed)
        problem = QFoldedProblem(ensemble, model, readout)
        rows.append([nbar, q, N, time_gradient_iteration(problem, u, config.iterations, config.repeats)])
    return pd.DataFrame(rows, columns=TIMING_COLUMNS)


def fit_loglog_slope(table: pd.DataFrame, column: str = "q", n: Optional[int] = None) -> float:
    """
    log(seconds_per_iteration) 对 log(column) 的最小二乘斜率

    表中有多个 n 时, 缺省取最大的 n
    """
    if table.empty:
        raise ValueError("timing table is empty")
    n = int(table["n"].max()) if n is None else n
    rows = table[table["n"] == n]
    if rows[column].nunique() < 2:
        raise ValueError(f"need at least two distinct {column} values to fit a slope")
    slope, _ = np.polyfit(np.log(rows[column].to_numpy(dtype=float)),
                          np.log(rows["seconds_per_iteration"].to_numpy(dtype=float)), 1)
    return float(slope)
