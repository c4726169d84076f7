"""Exception types shared across the package."""


class WeakLiftError(Exception):
    pass


class ShapeMismatch(WeakLiftError, ValueError):
    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)
        self.shapes = shapes


class NonScalarRoot(WeakLiftError, ValueError):
    pass


class MissingGradient(WeakLiftError, RuntimeError):
    def __init__(self, name):
        super().__init__(f"parameter {name!r} has no gradient")
        self.name = name


class MissingRequiredJoints(WeakLiftError, ValueError):
    pass


class InvalidImageDims(WeakLiftError, ValueError):
    pass


class BehindCamera(WeakLiftError, ValueError):
    def __init__(self, message, sample_index=None):
        if sample_index is not None:
            message = f"{message} (sample {sample_index})"
        super().__init__(message)
        self.sample_index = sample_index


class DegenerateConfiguration(WeakLiftError, ValueError):
    pass


class DegenerateBone(WeakLiftError, ValueError):
    pass


class MissingCameraGroundTruth(WeakLiftError, ValueError):
    pass


class ComponentKindMismatch(WeakLiftError, ValueError):
    pass


class EmptyPool(WeakLiftError, ValueError):
    pass


class ParseError(WeakLiftError, ValueError):
    def __init__(self, line, field, detail=""):
        msg = f"line {line}: bad field {field!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
        self.line = line
        self.field = field


class InvariantViolation(WeakLiftError, ValueError):
    def __init__(self, record_id, detail):
        super().__init__(f"record {record_id!r}: {detail}")
        self.record_id = record_id


class ConfigError(WeakLiftError, ValueError):
    pass


class EmptyDataset(WeakLiftError, ValueError):
    pass


class TrainingAborted(WeakLiftError, RuntimeError):
    def __init__(self, message, last_good=None):
        if last_good is not None:
            message = f"{message}; last good checkpoint: {last_good}"
        super().__init__(message)
        self.last_good = last_good
