"""Exception hierarchy. Every error carries a stable machine-readable slug in
``code``, which the CLI and the wire protocol surface verbatim."""

from __future__ import annotations


class StegoError(Exception):
    """Base class for all toolkit failures."""

    code: str = "error"

    def __init__(self, message: str = "", *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class CouplingError(StegoError):
    code = "coupling-error"


class InstanceTooLargeError(CouplingError):
    code = "instance-too-large"


class KlUndefinedError(StegoError):
    code = "kl-undefined"


class CipherError(StegoError):
    code = "cipher-error"


class LengthMismatchError(CipherError):
    code = "length-mismatch"


class ChannelError(StegoError):
    code = "channel-error"


class UnknownTokenError(ChannelError):
    code = "unknown-token"


class RemoteUnavailableError(ChannelError):
    code = "remote-unavailable"


class ProtocolViolationError(ChannelError):
    code = "protocol-violation"


class CodecError(StegoError):
    code = "codec-error"


class NonterminationError(CodecError):
    code = "nontermination"


class PosteriorCollapseError(CodecError):
    code = "posterior-collapse"


class InsufficientTokensError(CodecError):
    code = "insufficient-tokens"
