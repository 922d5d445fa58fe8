"""Exception types shared across the package.

Contract violations (bad arguments, impossible shapes) raise plain
ValueError.  The two classes below exist so the CLI can map failures to
distinct exit codes: FormatError -> 2, NumericError -> 3.
"""


class FormatError(Exception):
    """A binary file is not in the expected on-disk format."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values (divergence, overflow)."""
