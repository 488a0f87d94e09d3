"""Shared exception types.

Invalid arguments raise plain ValueError; these cover the two failure
families that callers are expected to branch on.
"""


class NumericError(ArithmeticError):
    """Non-finite values reached an optimizer or update step."""


class ConfigurationError(Exception):
    """A run spec, checkpoint reference, or CLI invocation is unusable."""
