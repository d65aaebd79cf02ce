class ConfigurationError(ValueError):
    """A configuration value violates a documented constraint."""


class ContractError(ValueError):
    """An operation received inputs outside its contract (e.g. wrong sample rate)."""


class DivergenceError(FloatingPointError):
    """Adaptive filter weights became non-finite."""
