"""Exception hierarchy shared by all toolkit modules.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4, anything else -> 1.
"""


class ToolkitError(Exception):
    """Base class for toolkit errors."""


class ContractError(ToolkitError, ValueError):
    """A caller violated a documented precondition."""


class ShapeError(ContractError):
    """Operands have incompatible shapes; message names both."""


class SizeError(ContractError):
    """A brute-force guard was exceeded."""


class ConfigError(ToolkitError):
    """Invalid configuration file, flag, or generator spec."""


class DataError(ToolkitError):
    """Dataset content, schema, or integrity problem."""


class MetricError(ToolkitError):
    """A metric is undefined for the given inputs."""


class NumericError(ToolkitError):
    """Non-finite values or invalid numeric arguments."""
