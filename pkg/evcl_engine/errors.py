
class EngineError(Exception):
    """Base class for every error raised by evcl_engine."""


class DimensionError(EngineError):
    def __init__(self, op: str, left, right=None):
        self.op = op
        self.left = tuple(left)
        self.right = tuple(right) if right is not None else None
        if self.right is None:
            msg = f"{op}: invalid shape {self.left}"
        else:
            msg = f"{op}: shape mismatch {self.left} vs {self.right}"
        super().__init__(msg)


class DomainError(EngineError):
    """Value outside the domain of an operation (log of x <= 0, negative lambda, bad label)."""


class AlignmentError(EngineError):
    """Parameters, snapshots and Fisher estimates do not line up entry for entry."""


class FormatError(EngineError):
    """Malformed or unsupported binary container."""


class TruncationError(FormatError):
    def __init__(self, what: str, expected: int, actual: int):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: truncated payload, expected {expected} bytes, got {actual}")


class DatasetError(EngineError):
    pass


class DatasetNotFoundError(DatasetError):
    def __init__(self, path, hint: str = ""):
        self.path = str(path)
        msg = f"Dataset file not found: {self.path}"
        if hint:
            msg = f"{msg} ({hint})"
        super().__init__(msg)


class ConfigError(EngineError):
    pass
