class EqFocalError(Exception):
    pass


class ParameterError(EqFocalError, ValueError):
    """A hyper-parameter is outside its admissible range."""


class DomainError(EqFocalError, ValueError):
    """An input value (e.g. a logit) is not finite."""


class ContractError(EqFocalError, ValueError):
    """Shapes or sizes of the arguments do not agree."""


class ParseError(EqFocalError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where = f" ({where})"
        super().__init__(message + where)


class NumericalError(EqFocalError, FloatingPointError):
    def __init__(self, message, iteration=None, category=None):
        self.iteration = iteration
        self.category = category
        super().__init__(message)
