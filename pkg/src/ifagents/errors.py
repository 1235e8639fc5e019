"""Exception types shared across the package.

``InputFormatError`` subclasses cover malformed user-supplied files and map to
CLI exit status 3; everything else derives from ``IFAgentsError`` and maps to 4.
"""


class IFAgentsError(Exception):
    pass


class InputFormatError(IFAgentsError):
    pass


class GameParseError(InputFormatError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


class GameValidationError(InputFormatError):
    pass


class TranscriptFormatError(InputFormatError):
    def __init__(self, line: int, message: str = "expected 'observation<TAB>action'"):
        super().__init__(f"line {line}: {message}")
        self.line = line


class CheckpointError(InputFormatError):
    pass


class SteppedAfterDone(IFAgentsError):
    pass


class NoMaskableError(IFAgentsError):
    pass


class DimMismatch(IFAgentsError):
    pass


class SeqTooLong(IFAgentsError):
    pass


class EmptyCandidates(IFAgentsError):
    pass


class IndexOutOfRange(IFAgentsError):
    pass


class BufferEmpty(IFAgentsError):
    pass


class IncompatibleActionSpace(IFAgentsError):
    pass


class StateSpaceTooLarge(IFAgentsError):
    pass
