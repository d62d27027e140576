"""Exception hierarchy. Each class carries the short error code used in reports."""


class AllocationError(Exception):
    code = "ERROR"


class EmptyBoxError(AllocationError, ValueError):
    code = "EMPTY_BOX"


class PwlBreakpointError(AllocationError, ValueError):
    code = "PWL_BREAKPOINT"


class DegenerateInputError(AllocationError, ValueError):
    code = "DEGENERATE_INPUT"


class ShapeMismatchError(AllocationError, ValueError):
    code = "SHAPE_MISMATCH"


class DivergedError(AllocationError, ArithmeticError):
    code = "DIVERGED"


class FormatError(AllocationError, ValueError):
    code = "FORMAT_ERROR"


class RankDeficientError(AllocationError, ArithmeticError):
    code = "RANK_DEFICIENT"


class InsufficientSamplesError(AllocationError, RuntimeError):
    code = "INSUFFICIENT_SAMPLES"


class InadmissibleError(AllocationError, ValueError):
    code = "INADMISSIBLE"


class NonfiniteStateError(AllocationError, ArithmeticError):
    code = "NONFINITE_STATE"

    def __init__(self, message, times=None, states=None):
        super().__init__(message)
        self.times = times
        self.states = states
