from .EnsembleObject import Sample, Ensemble, SubEnsembleView, split, average_error, residual_norms
from .BallDataset import BallDataset, DatasetGenerationError
from .EnsembleReader import EnsembleReader
from .EnsembleWriter import EnsembleWriter
