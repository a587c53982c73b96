"""Exception hierarchy shared by all uvforge modules."""


class UvforgeError(Exception):
    """Base class for every error raised deliberately by uvforge."""


class InvalidArgumentError(UvforgeError, ValueError):
    pass


class DegenerateDataError(UvforgeError, ValueError):
    """Training data cannot define a separating hyperplane (e.g. one class)."""


class LookupMissError(UvforgeError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "lookup miss"


class CapacityError(UvforgeError):
    """A request asks for more items than a source can supply."""

    def __init__(self, message, source=None):
        super().__init__(message)
        self.source = source


class InfeasibleError(UvforgeError):
    """A quota plan cannot reach its target; ``groups`` lists the offenders."""

    def __init__(self, message, groups=()):
        super().__init__(message)
        self.groups = list(groups)


class ParseError(UvforgeError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(UvforgeError):
    pass
