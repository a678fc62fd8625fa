"""Error types raised across the pipeline.

Grouped by CLI exit code: usage problems exit 1, data problems exit 2,
training problems exit 3 (see cli.py).
"""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


# -- geometry ---------------------------------------------------------------

class ParallelPlanes(PipelineError):
    """Two planes are (numerically) parallel and have no intersection line."""


class ParallelLines(PipelineError):
    """Two in-plane lines are (numerically) parallel and never cross."""


class OffPlanePoint(PipelineError):
    """A 3D point is too far from a plane's surface to project onto it."""


class AmbiguousOrientation(PipelineError):
    """A line is perpendicular to the patient axis requested for orienting it."""


# -- data -------------------------------------------------------------------

class DegenerateSpec(PipelineError):
    """Phantom parameters produce impossible or empty anatomy."""


class FormatError(PipelineError):
    """A study directory, NIfTI file or geometry sidecar is malformed."""


class InsufficientSubjects(PipelineError):
    """A dataset split asks for more subjects than are available."""


# -- network / training -----------------------------------------------------

class BadShape(PipelineError):
    """Tensor shapes do not conform to the network or loss contract."""


class ShapeMismatch(PipelineError):
    """Two label maps being compared have different shapes."""


class EmptyMask(PipelineError):
    """A contour metric was asked for on an empty mask."""


class EmptyDataset(PipelineError):
    """A training run was started with no slices to train on."""


class MissingCheckpoint(PipelineError):
    """A transfer mode that needs a pretrained checkpoint was given none."""


class BadBudget(PipelineError):
    """Multi-task sub-iteration budget is not divisible by the task weight."""


class TrainingDiverged(PipelineError):
    """Training finished with a mean loss no better than where it started."""
