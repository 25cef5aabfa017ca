"""Exception types shared across the simulator."""


class FedsimError(Exception):
    """Base class for all simulator errors."""


class ConfigurationError(FedsimError):
    """Invalid configuration value, network specification, or precondition."""


class ShapeError(FedsimError):
    """Tensor shapes disagree with the model they are used with."""


class NumericError(FedsimError):
    """Non-finite values showed up where finite math is required."""


class DataFormatError(FedsimError):
    """Unparseable or structurally invalid dataset input."""
