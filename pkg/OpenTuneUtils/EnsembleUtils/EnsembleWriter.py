from .EnsembleObject import Ensemble


class EnsembleWriter(object):
    def __init__(self):
        super().__init__()

    @staticmethod
    def to_dataset_string(ensemble: Ensemble, seed) -> str:
        """
        转换为数据集格式字符串

        首行 `# ball-dataset v1 n=<n> no=<n_o> q=<q> seed=<seed>`,
        之后每行 `index,x1,...,xn,y1,...,yno`
        """
        lines = [f"# ball-dataset v1 n={ensemble.n} no={ensemble.n_o} q={ensemble.q} seed={seed}"]
        for sample in ensemble:
            values = [repr(float(v)) for v in sample.x] + [repr(float(v)) for v in sample.y]
            lines.append(",".join([str(sample.index)] + values))
        return "\n".join(lines) + "\n"

    def write(self, ensemble: Ensemble, filename, seed=None):
        with open(filename, 'w') as output_file:
            output_file.write(self.to_dataset_string(ensemble, seed))
