"""Exception hierarchy shared by all modules."""


class IVEMError(Exception):
    """Base class for library errors."""


class InvalidArgumentError(IVEMError, ValueError):
    pass


class DegenerateGeometryError(IVEMError):
    """Cut geometry that cannot carry a valid boundary triangulation."""


class TopologyError(IVEMError):
    """Region boundaries that do not close."""


class ConformityError(IVEMError):
    """Two mothers of a face disagree on its triangulation."""


class DivergenceError(IVEMError):
    """Non-finite values met inside an iterative solve."""


class ConfigurationError(IVEMError):
    pass
