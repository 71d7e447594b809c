from .ModelObject import ModelKind, ModelConfig, ControlledModel, VectorField, FlowDivergenceError
from .ModelObject import linear_field, constant_field
from .ControlObject import ControlSignal, Trajectory
from .EulerFlow import EulerFlow, ReadoutMap
from .ControlReader import ControlReader, ControlCheckpoint
from .ControlWriter import ControlWriter
