"""Exception hierarchy shared by every layer of the runtime."""


class ScpError(Exception):
    """Base class for all errors raised by this package."""


class DuplicateBodyId(ScpError):
    pass


class UnknownBodyId(ScpError, LookupError):
    pass


class UnencodableCapture(ScpError, TypeError):
    """A spore header value has no pickler that can encode it."""


class TypeMismatch(ScpError, TypeError):
    pass


class UnsupportedType(ScpError, TypeError):
    pass


class DecodeFailure(ScpError, ValueError):
    pass


class PicklerMismatch(DecodeFailure):
    """Self-describing bytes name a different type than the decoding pickler."""


class FramingError(DecodeFailure):
    pass


class BuilderUnknown(ScpError, LookupError):
    pass


class UnknownSilo(ScpError, LookupError):
    pass


class SizeMismatch(ScpError, ValueError):
    pass


class NodeUnreachable(ScpError, ConnectionError):
    pass


class RegistryMismatch(ScpError):
    pass


class BindFailure(ScpError, OSError):
    pass


class RemoteEvalError(ScpError):
    """A failure on a remote node, carried back to the requester."""

    def __init__(self, origin: int, kind: str, message: str):
        super().__init__(f"node {origin}: {kind}: {message}")
        self.origin = origin
        self.kind = kind
        self.message = message
