"""Exception hierarchy shared by all adrc modules."""


class AdrcError(Exception):
    """Base class for every error raised by this package."""


class InvalidTuning(AdrcError, ValueError):
    pass


class InvalidModel(AdrcError, ValueError):
    pass


class ConstructionError(AdrcError, ValueError):
    pass


class SingularTransform(AdrcError, ValueError):
    pass


class LimitSpecError(AdrcError, ValueError):
    pass


class NumericFault(AdrcError, ArithmeticError):
    """A non-finite value reached a controller or observer."""


class ProtocolError(AdrcError, RuntimeError):
    """An operation was invoked in the wrong lifecycle state."""


class ScenarioError(AdrcError, ValueError):
    pass


class ConfigError(AdrcError, ValueError):
    pass
