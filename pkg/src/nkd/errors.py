"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A model parameter lies outside its valid range."""


class TableSizeError(ParameterError):
    """A fitness table would need more than 2**26 entries per gene."""


class MissingCellError(KeyError):
    """A requested experiment cell is absent from the results."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "missing cell"
