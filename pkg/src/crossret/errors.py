"""Exception hierarchy for the forecasting engine."""


class CrossRetError(Exception):
    pass


# panel_store
class PanelError(CrossRetError):
    pass


class MalformedHeader(PanelError):
    pass


class MalformedRow(PanelError):
    pass


class DuplicateKey(PanelError):
    def __init__(self, month, stock_id):
        super().__init__(f"duplicate record for ({month}, {stock_id!r})")
        self.month = month
        self.stock_id = stock_id


class EmptyPanel(PanelError):
    pass


class MonthOutOfRange(PanelError):
    pass


# preprocess
class EmptyCrossSection(CrossRetError):
    pass


class MissingScaledMonth(CrossRetError):
    pass


class InsufficientHistory(CrossRetError):
    pass


# models
class DimensionMismatch(CrossRetError, ValueError):
    pass


class LengthMismatch(CrossRetError, ValueError):
    pass


class ShapeMismatch(CrossRetError, ValueError):
    pass


class StaleCache(CrossRetError):
    pass


class EmptyTrainingSet(CrossRetError):
    pass


class EmptyData(CrossRetError):
    pass


class TooFewExamples(CrossRetError):
    pass


class NonFiniteFeature(CrossRetError, ValueError):
    pass


class SerializationError(CrossRetError):
    pass


# pipeline
class ModelFitFailure(CrossRetError):
    def __init__(self, month, cause):
        super().__init__(f"model fit failed for {month}: {cause!r}")
        self.month = month
        self.cause = cause


class MonthKeyMismatch(CrossRetError):
    pass


class EmptyIntersection(CrossRetError):
    def __init__(self, month):
        super().__init__(f"no common stocks in month {month}")
        self.month = month


# metrics / portfolio
class TooFewStocks(CrossRetError):
    pass


class ZeroVariance(CrossRetError):
    pass


class UniverseTooSmall(CrossRetError):
    pass


class EmptyEvalList(CrossRetError):
    pass


class TooFewMonths(CrossRetError):
    pass


# synth / cli
class ConfigTooSmall(CrossRetError):
    pass


class ConfigError(CrossRetError):
    def __init__(self, pointer, message):
        super().__init__(f"{pointer or '/'}: {message}")
        self.pointer = pointer
        self.message = message


class MissingRunArtifacts(CrossRetError):
    pass
