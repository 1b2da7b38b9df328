"""Exception types shared across the solvers."""


class UnderlayError(Exception):
    pass


class ConfigError(UnderlayError, ValueError):
    pass


class BlockTooShort(UnderlayError):
    pass


class SaturationExceeded(UnderlayError, ValueError):
    pass


class NonUnitModulus(UnderlayError, ValueError):
    pass


class RankDeficient(UnderlayError):
    pass


class NotRankOne(UnderlayError):
    pass


class SubproblemInfeasible(UnderlayError):
    pass


class Infeasible(UnderlayError):
    pass


class MaxIterReached(UnderlayError):
    pass


class CcpStalled(UnderlayError):
    pass
