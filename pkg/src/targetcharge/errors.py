"""Exception types shared across the engine."""


class ConfigurationError(ValueError):
    """Invalid session or mechanism configuration."""


class ContractError(ValueError):
    """A caller violated an operation's contract (bad id, wrong arity, overlap...)."""
