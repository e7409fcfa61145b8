# errors.py
# Error hierarchy shared by services and the CLI. Every class knows its process exit code.


class HbmcError(Exception):
    """Base class for all errors raised by the model-comparison library."""
    exit_code = 1


class ConfigError(HbmcError, ValueError):
    """Run config or command-line options are invalid."""
    exit_code = 2


class StructuralError(HbmcError, ValueError):
    """Shapes, arities or set sizes do not fit together."""
    exit_code = 2


class DomainError(HbmcError, ValueError):
    """A parameter lies outside its admissible range."""
    exit_code = 2


class NumericalError(HbmcError, ArithmeticError):
    """A computation produced a non-finite value. `node` names the operation that did it."""
    exit_code = 3

    def __init__(self, message: str, node: str | None = None):
        super().__init__(message if node is None else f"{message} (at {node})")
        self.node = node


class TrainingAborted(NumericalError):
    """Training hit a non-finite loss; carries the last good parameters and the trace so far."""

    def __init__(self, message: str, params=None, trace=None, node: str | None = None):
        super().__init__(message, node=node)
        self.params = params
        self.trace = trace or []


class SimulationError(HbmcError):
    """A simulator failed; `model_index` says which candidate model was being simulated."""
    exit_code = 3

    def __init__(self, message: str, model_index: int | None = None, family: str | None = None):
        super().__init__(f"model {model_index} ({family}): {message}")
        self.reason = message
        self.model_index = model_index
        self.family = family


class AccuracyError(HbmcError):
    """Quadrature did not self-converge to the requested tolerance."""
    exit_code = 4
