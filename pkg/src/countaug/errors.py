"""Exception hierarchy shared across the package."""


class CountaugError(Exception):
    """Base class for every error raised by this package."""


class AnnotationError(CountaugError):
    """A dataset record or file violates the ingest contract."""


class FormatError(CountaugError):
    """A binary payload (density map, embedding sidecar) is malformed."""


class ProtocolError(CountaugError):
    """A generation request or response violates the wire contract."""


class StoreError(CountaugError):
    """The augmentation store is missing or inconsistent with a plan."""
