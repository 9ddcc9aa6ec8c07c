"""Exception types shared across the package.

The CLI maps these onto exit codes: validation/schema problems exit 2,
resource-limit problems exit 3, numerical degeneracy exits 4.
"""


class SchemaError(ValueError):
    """A value, file, or comparison schema does not fit its declared shape."""


class ConfigError(ValueError):
    """A run configuration is invalid (detected before any work starts)."""


class ContractViolation(ValueError):
    """Inconsistent latent state passed to a model operation."""


class ResourceLimitError(RuntimeError):
    """A configured resource cap (e.g. candidate-pair budget) was exceeded."""


class DegeneracyError(RuntimeError):
    """A numerical degeneracy that prevents a meaningful result."""
