from .QFolded import QFoldedConfig, QFoldedProblem, TrainingResult, EnsembleObjective, ObjectiveValue
from .QFolded import qfolded_train, gradient_descent, norm_regularizer, initial_control
from .PenaltyMethod import PenaltyConfig, penalty_tune
from .ScratchTraining import scratch_phase1_train
from .ScalingProbe import ProbeConfig, qfolded_iteration_cost_probe, fit_loglog_slope, TIMING_COLUMNS
