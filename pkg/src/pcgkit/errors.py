"""Exception types shared across the toolkit."""


class ParameterError(ValueError):
    """An argument violates an operation's contract (bad band edges, rates, ...)."""


class ShapeError(ParameterError):
    """Array dimensions are inconsistent with what an operation requires."""


class NoCyclesError(RuntimeError):
    """No complete cardiac cycle could be located in a recording."""


class TrainingSetupError(ValueError):
    """A training run cannot start (empty corpus, single-class labels, ...)."""


class TrainingDivergedError(RuntimeError):
    """A loss or gradient became non-finite during optimization."""


class FormatError(RuntimeError):
    """A model container file is malformed. ``offset`` is the failing byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class CorpusError(ValueError):
    """Corpus loading or relabeling failed; ``problems`` itemizes every offender."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("corpus error:\n" + "\n".join(f"  - {p}" for p in self.problems))


class RecipeError(ValueError):
    """A fused-dataset recipe references missing sources or has bad syntax."""


class MetricUndefinedError(ValueError):
    """A metric is undefined for the given confusion matrix (empty class row)."""


class PipelineError(RuntimeError):
    """A multi-stage decision pipeline was invoked with a missing stage."""
