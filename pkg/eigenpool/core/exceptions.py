class EigenpoolError(Exception):
    """Base error; `exit_code` is what the command line reports"""

    exit_code: int = 1

    def __init__(self, detail: str):
        super().__init__(detail)
        self.detail = detail


class InvalidInputError(EigenpoolError, ValueError):
    exit_code = 2


class DegenerateGapError(EigenpoolError, ValueError):
    """Tied entries where the normalizing-constant approximation needs strict gaps"""

    exit_code = 3


class NumericalError(EigenpoolError, ArithmeticError):
    exit_code = 3


class InvariantViolationError(EigenpoolError, AssertionError):
    exit_code = 3
