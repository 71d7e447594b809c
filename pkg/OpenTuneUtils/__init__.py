from .EnsembleUtils import *
from .DynamicsUtils import *
from .OptimizeUtils import *
from .BaselineUtils import *
from .ExperimentUtils import *
