from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd

from ..DynamicsUtils import ControlSignal, ControlledModel, ReadoutMap
from ..EnsembleUtils import Ensemble, average_error
from .EndpointJacobian import total_cost

REPORT_COLUMNS = ["round", "phase", "set", "metric", "value"]


@dataclass
class ReportRow:
    round: int
    phase: str
    set: str
    metric: str
    value: Union[int, float]


@dataclass
class TuningReport:
    """
    每个阶段/轮次在 memorized (X^j), new (X^q_j), all (X^q) 上的指标

    指标: avg_error, cost_sum, u_norm_sq, iterations;
    non_converged 与 drift_exceeded 记录未收敛的新样本和超出漂移预算的 X^j 样本 (索引 -> 代价)
    """
    rows: List[ReportRow] = field(default_factory=list)
    non_converged: Dict[int, float] = field(default_factory=dict)
    drift_exceeded: Dict[int, float] = field(default_factory=dict)

    def add(self, round_: int, phase: str, set_name: str, metric: str, value):
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            value = int(value)
        else:
            value = float(value)
        self.rows.append(ReportRow(round=round_, phase=phase, set=set_name, metric=metric, value=value))

    def append_errors(self, round_: int, phase: str, u: ControlSignal, ensemble: Ensemble, j: int,
                      model: ControlledModel, readout: ReadoutMap, iterations: Optional[int] = None):
        """记录 u 在三个集合上的 avg_error 与 cost_sum; 空集合不记录"""
        for set_name, view in (("memorized", ensemble.view(j)),
                               ("new", ensemble.view(j, ensemble.q)),
                               ("all", ensemble.view(ensemble.q))):
            if len(view) == 0:
                continue
            self.add(round_, phase, set_name, "avg_error", average_error(u, view, model, readout))
            self.add(round_, phase, set_name, "cost_sum", total_cost(model, u, view, readout))
        self.add(round_, phase, "all", "u_norm_sq", u.norm_sq())
        if iterations is not None:
            self.add(round_, phase, "all", "iterations", iterations)

    def value(self, round_: int, phase: str, set_name: str, metric: str):
        for row in self.rows:
            if (row.round, row.phase, row.set, row.metric) == (round_, phase, set_name, metric):
                return row.value
        raise KeyError(f"no report row for round={round_}, phase={phase}, set={set_name}, metric={metric}")

    def phases(self) -> List[tuple]:
        seen = []
        for row in self.rows:
            key = (row.round, row.phase)
            if key not in seen:
                seen.append(key)
        return seen

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([[row.round, row.phase, row.set, row.metric, row.value] for row in self.rows],
                            columns=REPORT_COLUMNS)

    def to_csv_string(self) -> str:
        lines = [",".join(REPORT_COLUMNS)]
        for row in self.rows:
            value = str(row.value) if isinstance(row.value, int) else repr(row.value)
            lines.append(f"{row.round},{row.phase},{row.set},{row.metric},{value}")
        return "\n".join(lines) + "\n"

    def to_csv(self, filename):
        # 浮点数用最短往返表示, 同一输入得到逐字节相同的文件
        with open(filename, 'w') as file:
            file.write(self.to_csv_string())

    @classmethod
    def read_csv(cls, filename) -> "TuningReport":
        frame = pd.read_csv(filename, float_precision='round_trip')
        report = cls()
        for record in frame.itertuples(index=False):
            value = record.value
            if record.metric == "iterations":
                value = int(value)
            report.add(int(record.round), record.phase, record.set, record.metric, value)
        return report
