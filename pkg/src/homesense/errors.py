"""Exception hierarchy shared by every layer of the package."""


class HomesenseError(Exception):
    """Base class for all errors raised by this package."""


# covert frames
class InvalidHeader(HomesenseError, ValueError):
    pass


class NotOurs(HomesenseError):
    """Frame does not carry this protocol's address shape (or the wrong id)."""


# credential envelope / erasure coding
class CredentialsTooLong(HomesenseError, ValueError):
    pass


class AuthFailure(HomesenseError):
    pass


class ReplayDetected(HomesenseError):
    pass


class MalformedPlaintext(HomesenseError):
    pass


class MalformedMessage(HomesenseError):
    """Byte string cannot be split into iv / sequence / ciphertext / mac."""


class MessageTooLarge(HomesenseError):
    pass


class InsufficientBlocks(HomesenseError):
    pass


class CorruptLengthPrefix(HomesenseError):
    pass


class CorruptPadding(HomesenseError):
    """Bytes after the framed message are not zero."""


# provisioning
class UnknownSensor(HomesenseError, KeyError):
    pass


# durable queue
class StorageFailure(HomesenseError, OSError):
    pass


class AckOverrun(HomesenseError):
    pass


class CorruptLog(HomesenseError):
    pass


# collection
class RequestTimeout(HomesenseError):
    pass


class SinkFailure(HomesenseError):
    pass


# simulation
class PastEvent(HomesenseError, ValueError):
    pass


class UnknownNode(HomesenseError, KeyError):
    pass


class ConservationError(HomesenseError, AssertionError):
    pass


class ConfigError(HomesenseError, ValueError):
    def __init__(self, key: str, message: str, line: int | None = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{key}: {message}{where}")
