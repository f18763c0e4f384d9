"""Exception types shared across the package."""


class HFLError(Exception):
    """Base class for all package errors."""


class ConfigurationError(HFLError, ValueError):
    """Invalid configuration or sampling range."""


class DomainError(HFLError, ValueError):
    """Argument outside the mathematical domain of a formula."""


class InfeasibleError(HFLError):
    """No finite-cost point exists (zero-rate link, unreachable deadline)."""


class ContractViolation(HFLError):
    """A caller broke a documented precondition."""


class NumericalError(HFLError, FloatingPointError):
    """Non-finite values appeared during training."""
