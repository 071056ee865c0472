"""Exception types shared across the package.

The CLI maps these onto process exit codes: ConfigError -> 2,
MissingArtifactError -> 3, DataError -> 4.
"""


class ConfigError(ValueError):
    """Invalid configuration value or unusable combination of options."""


class MissingArtifactError(FileNotFoundError):
    """A required on-disk artifact from an upstream stage is absent."""


class DataError(ValueError):
    """Input data violates the expected schema or content rules."""
