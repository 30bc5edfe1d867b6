"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class FanetError(Exception):
    exit_code = 2


class RejectedInputError(FanetError, ValueError):
    """Input has the wrong shape, size or content for the operation."""


class RejectedStateError(FanetError, RuntimeError):
    """Cached activations do not belong to the network they are used with."""


class DegenerateInputError(RejectedInputError):
    pass


class FormatError(FanetError, ValueError):
    pass


class DependencyError(FanetError, FileNotFoundError):
    """An upstream artifact is missing or stale."""


class ModelNotReadyError(FanetError, RuntimeError):
    pass


class PartialCorpusError(FanetError, KeyError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        shown = ", ".join(self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"missing features for ids: {shown}{more}")

    def __str__(self):
        return self.args[0]


class TrainingDivergedError(FanetError, FloatingPointError):
    exit_code = 3


class TrainingFailedError(FanetError, RuntimeError):
    exit_code = 3


class UndefinedMetricError(FanetError, ValueError):
    exit_code = 3
