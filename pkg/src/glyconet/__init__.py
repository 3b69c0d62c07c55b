"""Glucose time-series preprocessing and short-horizon hypoglycemia forecasting."""

__version__ = "0.1.0"

PIPELINE_VERSION = __version__

from .domain import (  # noqa: F401
    AgeGroup,
    CLASS_SETS,
    ClassBin,
    ClassSet,
    GlucoseSeries,
    Subject,
    WindowSample,
    age_group_of,
)
from .errors import DataError, GlyconetError, ModelFormatError, UsageError  # noqa: F401
