import os

import numpy as np
import pandas as pd

from .EnsembleObject import Ensemble, Sample


class EnsembleReader(object):
    def __init__(self):
        super().__init__()

    def read(self, filename) -> Ensemble:
        """
        读取数据集文件并解析为 Ensemble

        Args:
            filename: 数据集路径

        Returns:
            Ensemble: 按文件顺序排列的样本
        """
        header = self.read_header(filename)
        n, n_o, q = int(header["n"]), int(header["no"]), int(header["q"])
        body = pd.read_csv(filename, comment='#', header=None, float_precision='round_trip')
        if body.shape != (q, 1 + n + n_o):
            raise ValueError(f"Expected {q} records of {1 + n + n_o} fields in {filename}, got {body.shape}")
        values = body.to_numpy()
        samples = [
            Sample(x=np.asarray(row[1:1 + n], dtype=float), y=np.asarray(row[1 + n:], dtype=float), index=int(row[0]))
            for row in values
        ]
        return Ensemble(samples)

    @staticmethod
    def read_header(filename) -> dict:
        if not os.path.exists(filename):
            raise FileNotFoundError(f"File does not exist: {filename}")
        with open(filename, 'r') as file:
            first_line = file.readline().strip()
        if not first_line.startswith("# ball-dataset v1"):
            raise ValueError(f"Invalid dataset header in {filename}")
        header = {}
        for token in first_line[len("# ball-dataset v1"):].split():
            key, _, value = token.partition('=')
            header[key] = value
        for key in ("n", "no", "q"):
            if key not in header:
                raise ValueError(f"Missing header field {key!r} in {filename}")
        return header
