"""Exception hierarchy. The CLI maps these onto exit codes."""


class DbnLabError(Exception):
    """Base class for all errors raised by dbnlab."""


class DomainError(DbnLabError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SchemaError(DbnLabError, ValueError):
    """A structured input (config, cylinder, task list, file) is malformed."""


class ConstraintError(DbnLabError, ValueError):
    """Inputs are individually valid but violate a structural precondition."""


class CapacityError(ConstraintError):
    """A network is too small for the requested construction."""


class ResourceError(DbnLabError, RuntimeError):
    """Dense enumeration would exceed the configured size cap."""


class StorageError(DbnLabError, OSError):
    """A file could not be read or written."""
