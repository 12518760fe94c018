"""Exception hierarchy shared across the package."""


class DataError(Exception):
    """Invalid input data: malformed files, broken invariants, bad values."""


class FormatError(DataError):
    """A byte stream does not conform to the DSMT/DSMI layout."""
