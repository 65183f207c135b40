"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid run configuration; CLI maps this to exit code 2.

    ``errors`` aggregates every problem found, each as "path: message".
    """

    def __init__(self, message, errors=None):
        super().__init__(message)
        self.errors = list(errors) if errors is not None else [str(message)]


class GeometryError(ValueError):
    """Grids, windows and supports that do not fit together."""


class KernelError(ValueError):
    """Degenerate kernel, unsupported family operation, or mode mismatch."""


class ResourceError(RuntimeError):
    """Infeasible resource demand; CLI maps this to exit code 3."""

    def __init__(self, message, required_bytes=None):
        super().__init__(message)
        self.required_bytes = required_bytes
