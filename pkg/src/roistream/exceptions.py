"""Exception types raised across the package."""


class InvalidGeometryError(ValueError):
    """Frame, grid or mask dimensions are inconsistent."""


class ProtocolError(ValueError):
    """Patches or masks violate reassembly rules (duplicates, unexpected cells)."""


class DecodeError(ValueError):
    """Base class for datagram decoding failures."""


class NotAPacketError(DecodeError):
    pass


class CorruptPacketError(DecodeError):
    pass


class UnsupportedVersionError(DecodeError):
    pass


class TransportError(OSError):
    """Socket bind/send/receive failure in the datagram runner."""
