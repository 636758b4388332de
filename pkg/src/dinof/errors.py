"""Exception hierarchy shared across the package."""


class DinofError(Exception):
    """Base class for all package errors."""


class ShapeError(DinofError, ValueError):
    """Operand shapes do not conform for the requested operation."""

    def __init__(self, op, *shapes):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DomainError(DinofError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UsageError(DinofError, ValueError):
    """API called with arguments that violate its preconditions."""


class FlowStateError(DinofError, RuntimeError):
    """Flow used before its data-dependent initialization in strict mode."""


class NonFiniteLossError(DinofError, FloatingPointError):
    """A training loss component became NaN or infinite."""

    def __init__(self, component, iteration, value):
        self.component = component
        self.iteration = iteration
        super().__init__(f"non-finite {component} at iteration {iteration}: {value!r}")


class ConfigError(DinofError):
    """Invalid experiment configuration."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


class CheckpointError(DinofError):
    """Checkpoint file is unreadable or not a DINOF1 container."""


class DataError(DinofError):
    """Malformed sample file."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)
