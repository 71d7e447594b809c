from .ControlObject import ControlSignal
from .ModelObject import ModelKind


class ControlWriter(object):
    def __init__(self):
        super().__init__()

    @staticmethod
    def to_control_string(control: ControlSignal, kind: ModelKind, nbar: int) -> str:
        """
        转换为控制检查点格式字符串

        首行为 `# control v1 model=<kind> nbar=<nbar> p=<p> N=<N> T=<T>`,
        随后 N 行, 每行 p 个以空格分隔的数值 (最短往返十进制表示)
        """
        kind = ModelKind(kind)
        lines = [f"# control v1 model={kind.value} nbar={nbar} p={control.p} N={control.N} T={control.T!r}"]
        for row in control.values:
            lines.append(" ".join(repr(float(value)) for value in row))
        return "\n".join(lines) + "\n"

    def write(self, control: ControlSignal, kind: ModelKind, nbar: int, filename):
        with open(filename, 'w') as file:
            file.write(self.to_control_string(control, kind, nbar))
