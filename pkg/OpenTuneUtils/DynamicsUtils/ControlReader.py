import os
from dataclasses import dataclass

import numpy as np

from .ControlObject import ControlSignal
from .ModelObject import ModelKind


@dataclass
class ControlCheckpoint:
    control: ControlSignal
    kind: ModelKind
    nbar: int


class ControlReader(object):
    def __init__(self):
        super().__init__()

    def read(self, filename) -> ControlCheckpoint:
        """
        读取控制检查点文件

        Args:
            filename: 检查点路径

        Returns:
            ControlCheckpoint: 控制及其模型元数据

        Raises:
            FileNotFoundError: 文件不存在
            ValueError: 文件头或数值行格式错误
        """
        if not os.path.exists(filename):
            raise FileNotFoundError(f"File does not exist: {filename}")
        with open(filename, 'r') as file:
            lines = [line.strip() for line in file.readlines()]
        lines = [line for line in lines if line]
        if not lines or not lines[0].startswith("# control v1"):
            raise ValueError(f"Invalid control checkpoint header in {filename}")

        header = {}
        for token in lines[0][len("# control v1"):].split():
            if '=' not in token:
                raise ValueError(f"Malformed header token {token!r} in {filename}")
            key, value = token.split('=', 1)
            header[key] = value
        try:
            kind = ModelKind(header["model"])
            nbar = int(header["nbar"])
            p = int(header["p"])
            N = int(header["N"])
            T = float(header["T"])
        except KeyError as e:
            raise ValueError(f"Missing header field {e} in {filename}")

        rows = [[float(value) for value in line.split()] for line in lines[1:]]
        if len(rows) != N or any(len(row) != p for row in rows):
            raise ValueError(f"Expected {N} rows of {p} values in {filename}")
        control = ControlSignal(values=np.array(rows, dtype=float).reshape(N, p), T=T)
        return ControlCheckpoint(control=control, kind=kind, nbar=nbar)
