from .EndpointJacobian import EndpointJacobian, PerSampleCost, StaleJacobianError
from .EndpointJacobian import endpoint_jacobian, per_sample_cost, cost_gradient, sample_cost_and_gradient
from .EndpointJacobian import state_transition_matrices, total_cost
from .KernelProjection import KernelProjector, StackedConstraints, build_stacked, kernel_projector, project
from .KernelProjection import DEFAULT_RANK_TOLERANCE
from .LineSearch import StepResult, armijo_backtracking, descent_step
from .TuningReport import TuningReport, ReportRow, REPORT_COLUMNS
from .Tuner import TunerConfig, TuningState, HistoryRecord, PhaseRecord, ConvergenceError, DriftBudgetError
from .Tuner import phase1, phase2, phase3, refinement_rounds, tune_without_forgetting, kernel_residual
