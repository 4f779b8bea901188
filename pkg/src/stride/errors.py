"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: configuration problems exit with 2,
data/contract violations with 3, numeric divergence with 4.
"""


class StrideError(Exception):
    """Base class for all package errors."""


class ContractError(StrideError):
    """A documented precondition or postcondition was violated."""


class DimensionError(ContractError):
    """Array shapes do not conform; the message names both shapes."""


class NumericError(StrideError):
    """Non-finite values where finite ones are required."""


class ConfigError(StrideError):
    """Invalid configuration value or schema violation."""


class GenerationError(StrideError):
    """Data generation failed (e.g. solver blow-up)."""


class TrainingError(StrideError):
    """Optimization failed (divergence, non-finite gradients)."""


class UnsupportedError(StrideError):
    """A reserved interface variant that is intentionally not implemented."""


class MetricError(StrideError):
    """A metric is undefined for the given inputs (e.g. zero-norm reference)."""
