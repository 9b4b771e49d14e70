"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration value or inconsistent arguments."""


class FormatError(ValueError):
    """Corrupt, truncated, or version-incompatible file."""


class CalibrationError(RuntimeError):
    """Compensation search exhausted its grid without hitting the rate target."""


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""
