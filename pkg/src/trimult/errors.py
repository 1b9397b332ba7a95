class RefusalError(ValueError):
    """A numerical precondition does not hold; the operation refuses to run."""


class ConstructionError(RefusalError):
    """A wavelet system could not be built from the given filter."""
