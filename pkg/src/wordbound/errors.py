"""Exception hierarchy shared by every wordbound module."""


class WordBoundError(Exception):
    """Base class for all errors raised by this package."""


# tokenizer
class EmptyCorpus(WordBoundError, ValueError):
    pass


class VocabSizeTooSmall(WordBoundError, ValueError):
    pass


class UnknownTokenId(WordBoundError, KeyError):
    pass


# boundary
class MalformedWordIds(WordBoundError, ValueError):
    pass


class MissingWBSpecial(WordBoundError, KeyError):
    pass


class LengthMismatch(WordBoundError, ValueError):
    pass


# morphological evaluation
class MissingPrediction(WordBoundError, KeyError):
    pass


class EmptyGold(WordBoundError, ValueError):
    pass


class EmptyInput(WordBoundError, ValueError):
    pass


# encoder
class InvalidConfig(WordBoundError, ValueError):
    pass


class IndexOutOfRange(WordBoundError, IndexError):
    pass


class ShapeMismatch(WordBoundError, ValueError):
    pass


class NoMaskedPositions(WordBoundError, ValueError):
    pass


# training
class NothingToMask(WordBoundError, ValueError):
    pass


class StepOutOfRange(WordBoundError, ValueError):
    pass


class CorpusTooSmall(WordBoundError, ValueError):
    pass


class SchemaConflict(WordBoundError, ValueError):
    pass


class LabelMismatch(WordBoundError, ValueError):
    pass


class CheckpointError(WordBoundError, ValueError):
    pass
