"""Exception hierarchy shared across the pipeline.

Every data-level failure derives from :class:`DataError`, which the command
line maps to exit status 2.
"""


class DataError(Exception):
    """Input data is missing, malformed or inconsistent."""


# ingest
class MalformedFeed(DataError):
    pass


class UnsupportedFormat(DataError):
    pass


class EmptyBody(DataError):
    """No text region long enough to be an article body."""


class FetchError(DataError):
    pass


# corpus
class StoreUnavailable(DataError):
    pass


# geolink
class SchemaError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InvalidPopulation(DataError, ValueError):
    pass


class MissingCounty(DataError):
    def __init__(self, outlet_id, fips, table):
        super().__init__(f"outlet {outlet_id!r}: county {fips!r} missing from {table}")
        self.outlet_id = outlet_id
        self.fips = fips
        self.table = table


# panel
class CoverageGap(DataError):
    pass


class DegenerateColumn(DataError, ValueError):
    def __init__(self, name):
        super().__init__(f"column {name!r} has zero variance")
        self.name = name


# glm
class Separation(DataError):
    def __init__(self, outlet):
        super().__init__(f"fitted probabilities separate for outlet {outlet!r}")
        self.outlet = outlet


class RankDeficient(DataError):
    def __init__(self, columns):
        super().__init__(f"design matrix is rank deficient; collinear columns: {', '.join(map(str, columns))}")
        self.columns = list(columns)


class SingularInformation(DataError):
    pass


# topics
class EmptyVocabulary(DataError):
    pass


class InsufficientSpan(DataError, ValueError):
    pass


class Diverged(DataError):
    pass


class EmptyWeek(DataError, KeyError):
    pass


class NoVariation(UserWarning):
    """All labels identical: expected disagreement is zero."""


# report
class ZeroVariance(DataError, ValueError):
    pass


class IoError(DataError, OSError):
    """An output file could not be written."""


class CollinearProfiles(UserWarning):
    """Two audience variables are strongly correlated across outlets."""
