import dataclasses
import os
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from ..BaselineUtils import TrainingResult, fit_loglog_slope, penalty_tune, qfolded_iteration_cost_probe
from ..BaselineUtils import qfolded_train, scratch_phase1_train
from ..DynamicsUtils import ControlReader, ControlSignal, ControlWriter, ControlledModel, ModelKind, ReadoutMap
from ..EnsembleUtils import BallDataset, Ensemble, EnsembleReader, EnsembleWriter, average_error
from ..OptimizeUtils import total_cost, tune_without_forgetting
from .ExperimentConfig import ConfigError, ExperimentConfig
from .RunManifest import RunManifest


class CheckpointMismatchError(ValueError):
    """控制检查点与配置中的模型不一致"""

    def __init__(self, filename: str, expected: dict, actual: dict):
        self.filename = filename
        self.expected = expected
        self.actual = actual
        super().__init__(f"checkpoint {filename} has {actual}, config expects {expected}")


@dataclass
class CommandResult:
    command: str
    artifacts: Dict[str, str] = field(default_factory=dict)
    converged: bool = True
    metrics: Dict[str, float] = field(default_factory=dict)


def _format_value(value) -> str:
    return str(value) if isinstance(value, int) else repr(float(value))


class ExperimentRunner:
    """
    实验流程: 生成数据 -> 在 X^j 上训练 u0 -> 不遗忘微调 / 罚函数法 -> 评估

    所有产出写入 config.output.dir, 每个命令附带一个 manifest_<command>.json
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.model = ControlledModel.two_layer_tanh(config.model.nbar)

    @property
    def out_dir(self) -> str:
        return self.config.output.dir

    @property
    def verbose(self) -> bool:
        return self.config.output.verbose

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    @property
    def dataset_path(self) -> str:
        return self.config.data.path or self.path("dataset.csv")

    def _print(self, message: str):
        if self.verbose:
            print(message)

    def _manifest(self, command: str) -> RunManifest:
        return RunManifest(command=command, config_echo=self.config.echo())

    def _finish(self, manifest: RunManifest, result: CommandResult, start: float) -> CommandResult:
        for name, filename in result.artifacts.items():
            manifest.add_artifact(name, filename)
        manifest.timings[manifest.command] = time.perf_counter() - start
        result.artifacts["manifest"] = manifest.write(self.out_dir)
        return result

    def readout(self, ensemble: Ensemble) -> ReadoutMap:
        return ReadoutMap.canonical(ensemble.n_o, self.model.nbar)

    def load_dataset(self, filename: Optional[str] = None) -> Ensemble:
        filename = self.dataset_path if filename is None else filename
        ensemble = EnsembleReader().read(filename)
        if ensemble.n > self.model.nbar or ensemble.n_o > self.model.nbar:
            raise ConfigError(f"dataset has n={ensemble.n}, n_o={ensemble.n_o}, larger than nbar={self.model.nbar}",
                              section="model", key="nbar")
        if self.config.data.j > ensemble.q:
            raise ConfigError(f"j={self.config.data.j} exceeds the dataset size q={ensemble.q}", section="data", key="j")
        return ensemble

    def load_control(self, filename: str) -> ControlSignal:
        checkpoint = ControlReader().read(filename)
        expected = {"model": ModelKind.TwoLayerTanh.value, "nbar": self.model.nbar, "p": self.model.p}
        actual = {"model": ModelKind(checkpoint.kind).value, "nbar": checkpoint.nbar, "p": checkpoint.control.p}
        if actual != expected:
            raise CheckpointMismatchError(filename, expected, actual)
        return checkpoint.control

    def write_control(self, control: ControlSignal, name: str) -> str:
        filename = self.path(name)
        ControlWriter().write(control, ModelKind.TwoLayerTanh, self.model.nbar, filename)
        return filename

    def gen_data(self) -> CommandResult:
        start = time.perf_counter()
        data = self.config.data
        ensemble = BallDataset.generate(data.q, data.seed, margin=data.margin, box_halfwidth=data.box_halfwidth,
                                        n=data.n)
        os.makedirs(self.out_dir, exist_ok=True)
        filename = self.dataset_path
        EnsembleWriter().write(ensemble, filename, seed=data.seed)
        balance = BallDataset.label_balance(ensemble)
        self._print(f"generated q={ensemble.q} samples (inside={balance['inside']}, outside={balance['outside']})")
        self._print(f"dataset: {filename}")
        result = CommandResult("gen-data", artifacts={"dataset": filename},
                               metrics={"inside": balance["inside"], "outside": balance["outside"]})
        return self._finish(self._manifest("gen-data"), result, start)

    def train(self) -> CommandResult:
        """在 X^j 上训练 u0, 写出 u0.ctrl 与 train_curve.csv"""
        start = time.perf_counter()
        ensemble = self.load_dataset()
        manifest = self._manifest("train")
        manifest.add_inputs([self.dataset_path])
        readout = self.readout(ensemble)
        j = self.config.data.j
        memorized = ensemble.view(j)
        if j == 0:
            training = TrainingResult(control=ControlSignal.zeros(self.config.model.N, self.model.p,
                                                                  T=self.config.model.T),
                                      iterations=0, converged=True)
        elif self.config.train.method == "qfolded":
            training = qfolded_train(memorized, self.model, readout, self.config.qfolded,
                                     seed=self.config.train.init_seed)
        else:
            training = scratch_phase1_train(memorized, self.model, readout, self.config.model.N,
                                            config=self.config.tuner, T=self.config.model.T,
                                            seed=self.config.train.init_seed)
        error = average_error(training.control, memorized, self.model, readout) if j > 0 else 0.0

        os.makedirs(self.out_dir, exist_ok=True)
        control_file = self.write_control(training.control, "u0.ctrl")
        curve_file = self.path("train_curve.csv")
        training.write_curve(curve_file)
        accepted = error <= self.config.train.acceptance_error
        self._print(f"trained u0 on X^{j} with {self.config.train.method}: {training.iterations} iterations, "
                    f"E(u0, X^j)={error:.4g} ({'accepted' if accepted else 'above acceptance threshold'})")
        result = CommandResult("train", artifacts={"u0": control_file, "train_curve": curve_file},
                               converged=accepted, metrics={"avg_error_memorized": error})
        return self._finish(manifest, result, start)

    def tune(self, control_file: Optional[str] = None) -> CommandResult:
        """不遗忘微调, 写出 u_star.ctrl 与 tune_report.csv"""
        start = time.perf_counter()
        control_file = self.path("u0.ctrl") if control_file is None else control_file
        ensemble = self.load_dataset()
        u0 = self.load_control(control_file)
        manifest = self._manifest("tune")
        manifest.add_inputs([self.dataset_path, control_file])
        readout = self.readout(ensemble)
        u_star, report = tune_without_forgetting(u0, ensemble, self.config.data.j, self.model, readout,
                                                 self.config.tuner)
        metrics = self._final_errors(u_star, ensemble, readout)
        if self.config.train.joint_reference:
            # q-folded 训练全部 X^q 作为可塑性参照, 记为 round 0 的 "joint" 行
            joint = qfolded_train(ensemble.view(ensemble.q), self.model, readout, self.config.qfolded,
                                  seed=self.config.train.init_seed)
            report.append_errors(0, "joint", joint.control, ensemble, self.config.data.j, self.model, readout,
                                 iterations=joint.iterations)
            metrics["joint_reference"] = report.value(0, "joint", "all", "avg_error")
        os.makedirs(self.out_dir, exist_ok=True)
        output_control = self.write_control(u_star, "u_star.ctrl")
        report_file = self.path("tune_report.csv")
        report.to_csv(report_file)
        for set_name, error in metrics.items():
            self._print(f"E(u*, {set_name}) = {error:.4g}" if set_name != "joint_reference"
                        else f"E(u0_joint, all) = {error:.4g}")
        if report.non_converged:
            self._print(f"not converged: samples {sorted(report.non_converged)}")
        if report.drift_exceeded:
            self._print(f"drift budget exceeded: samples {sorted(report.drift_exceeded)} of X^j")
        metrics["drift_exceeded"] = len(report.drift_exceeded)
        result = CommandResult("tune", artifacts={"u_star": output_control, "report": report_file},
                               converged=not report.non_converged and not report.drift_exceeded, metrics=metrics)
        return self._finish(manifest, result, start)

    def penalty(self, control_file: Optional[str] = None) -> CommandResult:
        """对每个 λ 做罚函数法微调"""
        start = time.perf_counter()
        control_file = self.path("u0.ctrl") if control_file is None else control_file
        ensemble = self.load_dataset()
        u0 = self.load_control(control_file)
        manifest = self._manifest("penalty")
        manifest.add_inputs([self.dataset_path, control_file])
        readout = self.readout(ensemble)
        os.makedirs(self.out_dir, exist_ok=True)
        result = CommandResult("penalty")
        for lambda_ in self.config.penalty_settings.lambdas:
            config = dataclasses.replace(self.config.penalty, lambda_=lambda_)
            u_tilde, report = penalty_tune(u0, ensemble, self.config.data.j, self.model, readout, config)
            suffix = f"lambda={lambda_!r}"
            result.artifacts[f"u_tilde_{suffix}"] = self.write_control(u_tilde, f"u_tilde_{suffix}.ctrl")
            report_file = self.path(f"penalty_report_{suffix}.csv")
            report.to_csv(report_file)
            result.artifacts[f"report_{suffix}"] = report_file
            for set_name, error in self._final_errors(u_tilde, ensemble, readout).items():
                result.metrics[f"{set_name}@{suffix}"] = error
                self._print(f"λ={lambda_!r}: E(ũ, {set_name}) = {error:.4g}")
        return self._finish(manifest, result, start)

    def _final_errors(self, u: ControlSignal, ensemble: Ensemble, readout: ReadoutMap) -> Dict[str, float]:
        errors = {}
        j = self.config.data.j
        for set_name, view in (("memorized", ensemble.view(j)), ("new", ensemble.view(j, ensemble.q)),
                               ("all", ensemble.view(ensemble.q))):
            if len(view):
                errors[set_name] = average_error(u, view, self.model, readout)
        return errors

    def evaluate(self, control_file: Optional[str] = None, dataset_file: Optional[str] = None) -> CommandResult:
        """E 与 Σ J^i 在 X^j, X^q_j, X^q 上的取值, 写出 eval.csv"""
        start = time.perf_counter()
        control_file = self.path("u_star.ctrl") if control_file is None else control_file
        dataset_file = self.dataset_path if dataset_file is None else dataset_file
        ensemble = self.load_dataset(dataset_file)
        u = self.load_control(control_file)
        manifest = self._manifest("eval")
        manifest.add_inputs([dataset_file, control_file])
        readout = self.readout(ensemble)
        j = self.config.data.j
        rows: List[tuple] = []
        for set_name, view in (("memorized", ensemble.view(j)), ("new", ensemble.view(j, ensemble.q)),
                               ("all", ensemble.view(ensemble.q))):
            if len(view) == 0:
                continue
            rows.append((set_name, "avg_error", average_error(u, view, self.model, readout)))
            rows.append((set_name, "cost_sum", total_cost(self.model, u, view, readout)))
        os.makedirs(self.out_dir, exist_ok=True)
        eval_file = self.path("eval.csv")
        with open(eval_file, 'w') as file:
            file.write("set,metric,value\n")
            for set_name, metric, value in rows:
                file.write(f"{set_name},{metric},{_format_value(value)}\n")
        for set_name, metric, value in rows:
            print(f"{set_name:10s} {metric:10s} {value:.6g}")
        result = CommandResult("eval", artifacts={"eval": eval_file},
                               metrics={f"{set_name}.{metric}": value for set_name, metric, value in rows})
        return self._finish(manifest, result, start)

    def scaling(self) -> CommandResult:
        """q-folded 每次迭代耗时表 scaling.csv 与 log-log 斜率"""
        start = time.perf_counter()
        scaling = self.config.scaling
        table = qfolded_iteration_cost_probe(scaling.n_list, scaling.q_list, scaling.N, self.config.probe)
        os.makedirs(self.out_dir, exist_ok=True)
        table_file = self.path("scaling.csv")
        table.to_csv(table_file, index=False)
        metrics = {}
        if table["q"].nunique() >= 2:
            metrics["slope_q"] = fit_loglog_slope(table, column="q")
            self._print(f"fitted log-log slope in q: {metrics['slope_q']:.3f}")
        self._print(f"timing table: {table_file}")
        result = CommandResult("scaling", artifacts={"scaling": table_file}, metrics=metrics)
        return self._finish(self._manifest("scaling"), result, start)
