from .ExperimentConfig import ExperimentConfig, ConfigError, TRAIN_METHODS
from .ExperimentConfig import ModelSettings, DataSettings, TrainSettings, PenaltySettings, ScalingSettings, OutputSettings
from .RunManifest import RunManifest, git_blob_sha1
from .ExperimentRunner import ExperimentRunner, CommandResult, CheckpointMismatchError
