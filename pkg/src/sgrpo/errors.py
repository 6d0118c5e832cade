"""Exception hierarchy shared by every module."""


class SGRPOError(Exception):
    """Base class for all package errors."""


class ConfigurationError(SGRPOError, ValueError):
    """Invalid hyperparameters, shapes, or config-file contents."""


class InputError(SGRPOError, ValueError):
    """Malformed call arguments: bad token ids, wrong lengths, out-of-range scores."""


class ContractViolation(SGRPOError, RuntimeError):
    """An operation was called in a state its precondition forbids."""


class VerifierUnavailable(SGRPOError, RuntimeError):
    """The remote scorer could not be reached within the retry budget."""
