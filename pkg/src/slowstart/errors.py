class ParameterError(ValueError):
    """Invalid numeric parameter or configuration value."""


class WindowError(ValueError):
    """The simulated car window is too small to certify an exact answer."""


class DomainError(WindowError):
    """Query outside the domain on which a walk family is defined."""
