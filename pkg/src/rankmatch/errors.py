"""Exception hierarchy shared by the library and the CLI."""


class RankMatchError(Exception):
    """Base class for all errors raised by rankmatch."""


class InputError(RankMatchError, ValueError):
    """Malformed input data: non-finite values, wrong shapes, bad CSV cells."""


class ConfigurationError(RankMatchError, ValueError):
    """Invalid parameters such as M larger than a treatment group."""


class DomainError(RankMatchError, ValueError):
    """A basis was evaluated outside of [0, 1]^d."""


class DegenerateFitError(RankMatchError, ArithmeticError):
    """Series least squares could not be fit (all basis functions vanish)."""
