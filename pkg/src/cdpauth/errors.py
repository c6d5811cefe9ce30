class ConfigError(ValueError):
    """Invalid configuration: unknown printer ids, bad profile values, bad setups."""


class DegenerateImageError(ValueError):
    """Raised for constant images where a statistic is undefined."""
