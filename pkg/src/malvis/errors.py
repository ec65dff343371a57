"""Exception hierarchy shared by every malvis module."""


class MalvisError(Exception):
    """Base class for all library errors."""


# binary / image formats
class NotPE(MalvisError):
    pass


class Truncated(MalvisError):
    pass


class ZeroSize(MalvisError):
    pass


class EmptyInput(MalvisError):
    pass


class MalformedHeader(MalvisError):
    pass


class UnsupportedMaxval(MalvisError):
    pass


class SizeMismatch(MalvisError):
    pass


# corpus
class EmptyCorpus(MalvisError):
    pass


class UnreadableImage(MalvisError):
    def __init__(self, path, reason=""):
        self.path = path
        self.reason = reason
        msg = f"cannot decode image {path}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class FamilyTooSmall(MalvisError):
    pass


# numerics
class ShapeMismatch(MalvisError, ValueError):
    pass


class LabelOutOfRange(MalvisError, ValueError):
    pass


class UnknownArchitecture(MalvisError, ValueError):
    pass


class IncompatibleShape(MalvisError, ValueError):
    pass


class DivergedLoss(MalvisError):
    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        self.value = value
        super().__init__(f"loss became {value!r} at epoch {epoch}, batch {batch}")


# plumbing
class ConfigError(MalvisError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class IoFailure(MalvisError, OSError):
    pass
