"""Exception hierarchy shared by the simulator and its command-line front end."""


class SimulatorError(Exception):
    """Base class for every error raised by sttguard."""

    exit_code = 1


class DomainError(SimulatorError, ValueError):
    """A physical or numeric argument is outside its valid domain."""


class ConfigError(SimulatorError):
    exit_code = 2


class TraceError(SimulatorError):
    exit_code = 3


class InvariantViolation(SimulatorError):
    """An internal consistency check failed; results must not be trusted."""

    exit_code = 4


class ProtocolError(SimulatorError):
    """A mitigation state machine was driven out of its legal order."""

    exit_code = 4


class HaltedError(SimulatorError):
    """A request was issued while the engine is halted."""


class ReportWriteError(SimulatorError, OSError):
    """An output file (report, sweep table, trace) could not be written."""

    exit_code = 5
