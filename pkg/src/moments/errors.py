"""Exception hierarchy shared by every stage of the pipeline.

Everything raised on purpose derives from :class:`MomentsError`, so callers
(the CLI in particular) can tell data problems apart from bugs.
"""

from __future__ import annotations


class MomentsError(Exception):
    """Base class for expected, data-dependent failures."""


class ConfigError(MomentsError, ValueError):
    pass


# media_io
class DecodeError(MomentsError):
    pass


class PipeBroken(DecodeError):
    pass


class TranscodeError(MomentsError):
    pass


class SpanOutOfRange(MomentsError, ValueError):
    pass


class ParseError(MomentsError, ValueError):
    pass


class EmptyTranscriptWarning(UserWarning):
    pass


# ssim
class DimensionMismatch(MomentsError, ValueError):
    pass


class FrameTooSmall(MomentsError, ValueError):
    pass


# sampler
class DegenerateData(MomentsError, ValueError):
    pass


class EmptyInput(MomentsError, ValueError):
    pass


class InfeasiblePlacement(MomentsError):
    """Some durations did not fit; ``placed`` holds the partial result."""

    def __init__(self, message: str, placed: list, unplaced: list[float]):
        super().__init__(message)
        self.placed = placed
        self.unplaced = unplaced


# extractor
class InvalidSpan(MomentsError, ValueError):
    pass


# analysis
class LengthMismatch(MomentsError, ValueError):
    pass


class OneClassOnly(MomentsError, ValueError):
    pass


class TooFewValidResamples(MomentsError):
    pass


class NonFinite(MomentsError, ValueError):
    pass


class MissingCombination(MomentsError, KeyError):
    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class EmptySlice(MomentsError, ValueError):
    pass


# baselines
class EmptyCorpus(MomentsError, ValueError):
    pass


class TooShort(MomentsError, ValueError):
    pass


class NotMono(MomentsError, ValueError):
    pass


class InconsistentDim(MomentsError, ValueError):
    pass


class TooFewPerClass(MomentsError, ValueError):
    pass


class SingleClass(MomentsError, ValueError):
    pass


class NonFiniteFeature(MomentsError, ValueError):
    pass


class DimMismatch(MomentsError, ValueError):
    pass
