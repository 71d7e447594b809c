import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from ..BaselineUtils import PenaltyConfig, ProbeConfig, QFoldedConfig
from ..DynamicsUtils import ModelKind
from ..OptimizeUtils import TunerConfig

TRAIN_METHODS = ("qfolded", "scratch-phase1")


class ConfigError(ValueError):
    """实验配置无法解析或不合法"""

    def __init__(self, message: str, section: Optional[str] = None, key: Optional[str] = None):
        self.section = section
        self.key = key
        location = f"[{section}] {key}: " if section and key else (f"[{section}]: " if section else "")
        super().__init__(f"{location}{message}")


@dataclass
class ModelSettings:
    kind: str = ModelKind.TwoLayerTanh.value
    nbar: int = 8
    N: int = 10
    T: float = 1.0


@dataclass
class DataSettings:
    q: int = 16
    j: int = 8
    n: int = 2
    seed: int = 1
    margin: float = 0.1
    box_halfwidth: float = 2.0
    path: str = ""


@dataclass
class TrainSettings:
    method: str = "qfolded"
    init_seed: int = 0
    acceptance_error: float = 0.05
    joint_reference: bool = False


@dataclass
class PenaltySettings:
    lambdas: Tuple[float, ...] = (1.0,)


@dataclass
class ScalingSettings:
    n_list: Tuple[int, ...] = (64,)
    q_list: Tuple[int, ...] = (4, 8, 16, 32)
    N: int = 10


@dataclass
class OutputSettings:
    dir: str = "runs/default"
    verbose: bool = True
    workers: int = 1


@dataclass
class ExperimentConfig:
    """
    实验配置, 由带 [section] 的 key = value 文本文件读入

    每个 section 对应一个或多个 dataclass; 一个键按顺序赋给第一个含有同名字段的对象
    """
    model: ModelSettings = field(default_factory=ModelSettings)
    data: DataSettings = field(default_factory=DataSettings)
    train: TrainSettings = field(default_factory=TrainSettings)
    qfolded: QFoldedConfig = field(default_factory=QFoldedConfig)
    tuner: TunerConfig = field(default_factory=TunerConfig)
    penalty_settings: PenaltySettings = field(default_factory=PenaltySettings)
    penalty: PenaltyConfig = field(default_factory=PenaltyConfig)
    scaling: ScalingSettings = field(default_factory=ScalingSettings)
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    output: OutputSettings = field(default_factory=OutputSettings)

    def section_targets(self) -> Dict[str, List[object]]:
        return {
            "model": [self.model],
            "data": [self.data],
            "train": [self.train, self.qfolded],
            "tuner": [self.tuner],
            "penalty": [self.penalty_settings, self.penalty],
            "scaling": [self.scaling, self.probe],
            "output": [self.output],
        }

    @classmethod
    def from_file(cls, filename: Optional[str] = None, overrides: Iterable[str] = ()) -> "ExperimentConfig":
        """
        读取配置文件并应用 `section.key=value` 覆盖项

        Raises:
            FileNotFoundError: 配置文件不存在
            ConfigError: 语法错误, 未知的 section/key, 或取值非法
        """
        config = cls()
        if filename is not None:
            if not os.path.exists(filename):
                raise FileNotFoundError(f"config file not found: {filename}")
            parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",),
                                               interpolation=None)
            parser.optionxform = str
            try:
                with open(filename, 'r') as file:
                    parser.read_file(file)
            except configparser.Error as error:
                raise ConfigError(f"cannot parse {filename}: {error}")
            for section in parser.sections():
                for key, value in parser.items(section):
                    config.set(section, key, value)
        for override in overrides:
            config.set_override(override)
        return config.validate()

    def set_override(self, override: str):
        if "=" not in override or "." not in override.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {override!r}")
        dotted, value = override.split("=", 1)
        section, key = dotted.strip().split(".", 1)
        self.set(section, key.strip(), value.strip())

    def set(self, section: str, key: str, raw: str):
        targets = self.section_targets()
        if section not in targets:
            raise ConfigError(f"unknown section, expected one of {sorted(targets)}", section=section)
        for target in targets[section]:
            names = {item.name: item for item in dataclasses.fields(target)}
            if key in names:
                try:
                    setattr(target, key, _convert(raw, getattr(target, key)))
                except ValueError as error:
                    raise ConfigError(str(error), section=section, key=key)
                return
        raise ConfigError("unknown key", section=section, key=key)

    def validate(self) -> "ExperimentConfig":
        if self.model.kind != ModelKind.TwoLayerTanh.value:
            raise ConfigError(f"only {ModelKind.TwoLayerTanh.value} models can be run from a config, "
                              f"got {self.model.kind}", section="model", key="kind")
        if self.model.nbar < 1 or self.model.N < 1 or not self.model.T > 0:
            raise ConfigError(f"invalid model dimensions nbar={self.model.nbar}, N={self.model.N}, T={self.model.T}",
                              section="model")
        if self.data.q < 1:
            raise ConfigError(f"q must be positive, got {self.data.q}", section="data", key="q")
        if not 0 <= self.data.j <= self.data.q:
            raise ConfigError(f"j must lie in 0..q={self.data.q}, got {self.data.j}", section="data", key="j")
        if not 1 <= self.data.n <= self.model.nbar:
            raise ConfigError(f"input dimension n must lie in 1..nbar={self.model.nbar}, got {self.data.n}",
                              section="data", key="n")
        if self.train.method not in TRAIN_METHODS:
            raise ConfigError(f"method must be one of {TRAIN_METHODS}, got {self.train.method!r}",
                              section="train", key="method")
        if any(value < 0 for value in self.penalty_settings.lambdas):
            raise ConfigError("lambdas must be non-negative", section="penalty", key="lambdas")
        if self.output.workers < 1:
            raise ConfigError(f"workers must be positive, got {self.output.workers}", section="output", key="workers")
        self.qfolded.N, self.qfolded.T = self.model.N, self.model.T
        for shared in (self.qfolded, self.tuner, self.penalty):
            shared.workers = self.output.workers
            shared.verbose = self.output.verbose
        self.probe.verbose = self.output.verbose
        for section, target in (("train", self.qfolded), ("tuner", self.tuner), ("penalty", self.penalty),
                                ("scaling", self.probe)):
            try:
                target.validate()
            except ValueError as error:
                raise ConfigError(str(error), section=section)
        return self

    def echo(self) -> Dict[str, Dict[str, object]]:
        """全部生效的配置项, 按 section 组织"""
        echo = {}
        for section, targets in self.section_targets().items():
            values = {}
            for target in targets:
                for key, value in dataclasses.asdict(target).items():
                    values.setdefault(key, list(value) if isinstance(value, tuple) else value)
            echo[section] = values
        return echo


def _convert(raw: str, current):
    raw = raw.strip()
    if isinstance(current, bool):
        lowered = raw.lower()
        if lowered in configparser.ConfigParser.BOOLEAN_STATES:
            return configparser.ConfigParser.BOOLEAN_STATES[lowered]
        raise ValueError(f"expected a boolean, got {raw!r}")
    if isinstance(current, tuple):
        item_type = type(current[0]) if current else float
        items = [item.strip() for item in raw.replace(";", ",").split(",") if item.strip()]
        if not items:
            raise ValueError("expected a non-empty comma separated list")
        return tuple(item_type(item) for item in items)
    if current is None:
        return None if raw.lower() in ("", "none") else float(raw)
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    return raw
