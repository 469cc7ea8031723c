"""Exception types shared across the package."""


class FeatstackError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(FeatstackError):
    """Invalid inputs, configuration, or a violated data contract."""


class FormatError(ValidationError):
    """A file exists but its contents are not in the expected format."""


class DivergedError(FeatstackError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int):
        super().__init__(f"diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch
