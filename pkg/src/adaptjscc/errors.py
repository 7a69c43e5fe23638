"""Exception types. ``code`` feeds the CLI's ``ERROR:<code>:`` prefix and exit status."""


class JSCCError(Exception):
    code = "error"
    exit_status = 1


class ConfigError(JSCCError, ValueError):
    code = "config"
    exit_status = 1


class FramingError(JSCCError, ValueError):
    code = "framing"
    exit_status = 1


class DegenerateInputError(JSCCError, ValueError):
    code = "degenerate"
    exit_status = 3


class DataError(JSCCError):
    code = "data"
    exit_status = 2


class NumericalError(JSCCError, FloatingPointError):
    code = "numerical"
    exit_status = 3


class CheckpointError(JSCCError):
    code = "checkpoint"
    exit_status = 2
