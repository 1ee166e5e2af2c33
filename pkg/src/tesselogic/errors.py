"""Exception types shared across the package."""


class TesseError(Exception):
    """Base class for all package errors."""


class AlphabetMismatch(TesseError):
    pass


class ParseError(TesseError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line
        self.col = col


class FragmentError(TesseError):
    """Input is outside the fragment an operation accepts."""


class BudgetExceeded(TesseError):
    def __init__(self, what: str, bound: int, needed: int | None = None):
        msg = f"{what}: enumeration budget {bound} exceeded"
        if needed is not None:
            msg += f" (needs {needed})"
        super().__init__(msg)
        self.bound = bound
        self.needed = needed
