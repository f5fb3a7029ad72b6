"""Exception types raised across the simulator."""


class FedCNIError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FedCNIError, ValueError):
    """Invalid configuration or generation parameters."""


class PartitionError(FedCNIError):
    """Dirichlet partitioning could not give every client at least one sample."""


class ShapeError(FedCNIError, ValueError):
    pass


class NumericError(FedCNIError, ArithmeticError):
    """Non-finite value encountered during a forward or backward pass."""

    def __init__(self, message, sample_id=None):
        super().__init__(message)
        self.sample_id = sample_id


class InsufficientDataError(FedCNIError, ValueError):
    pass


class AggregationError(FedCNIError):
    pass
