"""Exception types shared across the package."""


class DataFormatError(Exception):
    """A file or record violates one of the serialization schemas."""


class NumericalAbort(Exception):
    """A non-finite value appeared where the pipeline requires finiteness."""
