"""Exception hierarchy shared across the package."""


class CreditError(Exception):
    """Base class for all package errors."""


# marketdata
class MissingFile(CreditError):
    pass


class MalformedRow(CreditError):
    def __init__(self, path, line, reason):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class NonPositivePrice(CreditError):
    pass


class DuplicateDate(CreditError):
    pass


class InsufficientOverlap(CreditError):
    pass


class IndexOutOfRange(CreditError):
    pass


class ZeroVariance(CreditError):
    def __init__(self, channel):
        self.channel = channel
        super().__init__(f"channel {channel!r} is constant over the fit range")


class SampleTooShort(CreditError):
    pass


# pairselect
class DegenerateRegressor(CreditError):
    pass


class LengthMismatch(CreditError):
    pass


class SeriesTooShort(CreditError):
    pass


class SingularRegression(CreditError):
    pass


# env
class RangeOutOfBounds(CreditError):
    pass


class EpisodeDone(CreditError):
    pass


class EpisodeNotFinished(CreditError):
    pass


class Bankrupt(CreditError):
    pass


# reward
class ReturnBelowNegOne(CreditError):
    pass


class EmptyReturns(CreditError):
    pass


# nn / agent
class ShapeMismatch(CreditError):
    pass


class EmptyWindow(CreditError):
    pass


class NoRecordedForward(CreditError):
    pass


class NonFiniteLoss(CreditError):
    pass


# baselines / backtest
class DegenerateSpread(CreditError):
    pass


class ZeroDispersion(CreditError):
    pass


class NonPositiveEquity(CreditError):
    pass


class TooFewReturns(CreditError):
    pass


class ConfigError(CreditError):
    pass
