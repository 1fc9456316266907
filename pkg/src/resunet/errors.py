"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class ResUNetError(Exception):
    """Base class for all domain errors raised by the toolkit."""


class InvalidLabel(ResUNetError):
    def __init__(self, value, position=None):
        self.value = value
        self.position = position
        where = f" at {tuple(int(p) for p in position)}" if position is not None else ""
        super().__init__(f"invalid label value {value!r}{where}")


class InvalidIndex(ResUNetError):
    def __init__(self, value, position=None):
        self.value = value
        self.position = position
        where = f" at {tuple(int(p) for p in position)}" if position is not None else ""
        super().__init__(f"invalid class index {value!r}{where}")


class ShapeMismatch(ResUNetError):
    pass


class ShapeError(ResUNetError):
    pass


class DimMismatch(ResUNetError):
    pass


class MissingModality(ResUNetError):
    def __init__(self, modality: str, path=None):
        self.modality = modality
        self.path = path
        super().__init__(f"missing modality {modality}" + (f" ({path})" if path else ""))


class CorruptHeader(ResUNetError):
    pass


class IoError(ResUNetError):
    pass


class SpecError(ResUNetError):
    pass


class EmptyBrain(ResUNetError):
    pass


class DegenerateIntensity(ResUNetError):
    pass


class MissingLabels(ResUNetError):
    pass


class TooFewSamples(ResUNetError):
    pass


class ConfigError(ResUNetError):
    pass


class IndexOutOfRange(ResUNetError):
    pass


class NonFiniteLoss(ResUNetError):
    pass


class ViewMismatch(ResUNetError):
    pass


class EmptyCohort(ResUNetError):
    pass
