"""Exception types shared across the engine."""


class BrickrayError(Exception):
    """Base class for all engine errors."""


# --- scene tree ---

class UnknownNode(BrickrayError):
    """A node id does not exist in the scene."""


class CycleError(BrickrayError):
    """An operation would introduce a cycle (scene reparenting or pass graph)."""


# --- volume store ---

class DimensionMismatch(BrickrayError):
    """Dense input data does not match the declared dimensions."""


class UnsupportedDtype(BrickrayError):
    """Only u8 and u16 scalar volumes are supported."""


class LevelOutOfRange(BrickrayError):
    """Requested pyramid level does not exist."""


class KeyOutOfRange(BrickrayError):
    """A block key addresses outside the block grid / channels / timepoints."""


class CorruptFile(BrickrayError):
    """Volume file failed validation (magic, version, truncation, chunk sizes)."""


class UnsupportedVersion(BrickrayError):
    """Volume file has an unknown format version."""


# --- block cache ---

class CacheError(BrickrayError):
    """Base class for block cache errors."""


class CapacityTooSmall(CacheError):
    """Cache capacity cannot hold the pinned coarsest level."""


# --- renderer ---

class NoCamera(BrickrayError):
    """The scene contains no visible camera node."""


# --- render graph ---

class UnknownInput(BrickrayError):
    """A pass reads an attachment no pass produces."""


class DuplicateOutput(BrickrayError):
    """Two passes write the same attachment."""


class MissingDisplay(BrickrayError):
    """No pass outputs the reserved 'display' attachment."""


class PassError(BrickrayError):
    """A pass failed during execution; carries the pass name."""

    def __init__(self, pass_name, cause):
        super().__init__(f"pass '{pass_name}': {cause}")
        self.pass_name = pass_name
        self.cause = cause


# --- wire protocol ---

class FrameTooShort(BrickrayError):
    """A wire message was truncated."""


class UnknownType(BrickrayError):
    """A wire message carried an unknown type byte."""


class InvalidJson(BrickrayError):
    """A control payload was not parseable JSON."""
