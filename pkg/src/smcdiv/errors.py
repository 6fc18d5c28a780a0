"""Exception hierarchy shared across the package."""


class SmcDivError(Exception):
    """Base class for all errors raised by smcdiv."""


class ImpossibleLogWeightError(SmcDivError):
    """A log-weight of -inf was produced where a finite value is required."""


class ModelEvaluationError(SmcDivError):
    """A model evaluation returned NaN or an otherwise unusable value.

    NaN indicates a bug in the model, not an impossible event, so it is
    never silently mapped to -inf.
    """


class WeightCollapseError(SmcDivError):
    """Every particle weight at some step is zero (log -inf)."""


class SupportConditionError(SmcDivError):
    """A sampled forward/backward kernel pair has a zero-density counterpart."""


class HistoryShapeError(SmcDivError):
    """An execution history does not match the shape implied by its config."""


class ScheduleTargetError(SmcDivError):
    """A rejuvenation kernel was placed at a step it does not target."""


class ModelConsistencyError(SmcDivError):
    """A model's components disagree (joint density vs. chained factors, etc.)."""


class ConfigError(SmcDivError):
    """An experiment configuration file is invalid."""
