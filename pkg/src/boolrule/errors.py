"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1, data and
schema problems exit 2, provider problems exit 3.
"""


class BoolRuleError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(BoolRuleError):
    pass


class DataError(BoolRuleError):
    pass


class StructuralError(DataError):
    """A rule references predicates that the data does not provide."""


class RuleSyntaxError(DataError):
    def __init__(self, message, position):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class RuleValidationError(DataError):
    pass


class ProviderError(BoolRuleError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class FormatError(ProviderError):
    """A provider response could not be turned into the expected structure."""

    def __init__(self, message, raw=None):
        super().__init__(message)
        self.raw = raw
