"""Exception hierarchy shared by all cavfeas modules."""


class CavError(Exception):
    """Base class for every error raised by this package."""


class LayoutError(CavError, ValueError):
    pass


class UnknownPath(CavError, KeyError):
    def __str__(self):
        return f"unknown path_id {self.args[0]!r}"


class SingularSystem(CavError, ArithmeticError):
    pass


class NonMonotoneNodes(CavError, ValueError):
    pass


class IllConditioned(CavError, ArithmeticError):
    pass


class OutOfDomain(CavError, ValueError):
    pass


class OutOfRange(CavError, ValueError):
    pass


class NotMonotone(CavError, ValueError):
    pass


class ConfigError(CavError, ValueError):
    """Invalid configuration.

    ``location`` is a JSON-pointer style path ("/safety/tau_r") to the
    offending value, or "" for the document root.
    """

    def __init__(self, location, cause):
        super().__init__(f"{location or '/'}: {cause}")
        self.location = location
        self.cause = cause
