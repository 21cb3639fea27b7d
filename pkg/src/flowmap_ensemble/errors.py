"""Exception hierarchy."""


class FlowmapError(Exception):
    pass


class InvalidArgumentError(FlowmapError, ValueError):
    pass


class IntegrationError(FlowmapError, ArithmeticError):
    pass


class TrainingDivergedError(FlowmapError, ArithmeticError):
    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class EnsembleTrainingError(FlowmapError):
    """One or more ensemble members failed to train."""

    def __init__(self, message, failed_indices):
        super().__init__(message)
        self.failed_indices = list(failed_indices)


class RolloutDivergedError(FlowmapError, ArithmeticError):
    def __init__(self, message, member=None, step=None):
        super().__init__(message)
        self.member = member
        self.step = step


class ModelFileError(FlowmapError):
    pass


class CorruptFileError(ModelFileError):
    pass


class VersionMismatchError(ModelFileError):
    pass


class InvalidModelError(ModelFileError):
    pass


class ConfigError(FlowmapError, ValueError):
    pass
