"""Exception hierarchy shared by all modules."""


class SeedstabError(Exception):
    """Base class for every error raised by this package."""


class InputError(SeedstabError, ValueError):
    """Bad arguments or malformed records handed to an operation."""


class ParseError(InputError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericError(SeedstabError, ArithmeticError):
    def __init__(self, message, layer=None):
        self.layer = layer
        super().__init__(f"[{layer}] {message}" if layer else message)


class TrainingError(SeedstabError):
    """A training run diverged (non-finite loss)."""

    def __init__(self, message, epoch=None, step=None):
        self.epoch = epoch
        self.step = step
        super().__init__(f"{message} (epoch={epoch}, step={step})")


class TemplateError(InputError):
    pass


class SuiteBuildError(SeedstabError):
    def __init__(self, capability, message):
        self.capability = capability
        super().__init__(f"capability {capability!r}: {message}")


class ConfigError(SeedstabError):
    def __init__(self, field, message):
        self.field = field
        super().__init__(f"config field {field!r}: {message}")


class DataError(SeedstabError):
    """Missing or unreadable input/output files."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path is not None else message)


class IncompleteEvaluationError(SeedstabError):
    def __init__(self, missing):
        self.missing = list(missing)
        pairs = ", ".join(f"(seed={s}, variant={v})" for s, v in self.missing)
        super().__init__(f"evaluation coverage incomplete; missing {pairs}")


class AllSeedsFailedError(SeedstabError):
    pass
