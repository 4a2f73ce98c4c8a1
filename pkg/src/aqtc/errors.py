"""Exception types raised across the package."""


class AQTCError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(AQTCError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        msg = f"{op}: incompatible shapes {' vs '.join(str(s) for s in self.shapes)}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class EmptyAxisError(AQTCError, ValueError):
    pass


class NonScalarLossError(AQTCError, ValueError):
    pass


class EmptySequenceError(AQTCError, ValueError):
    pass


class ParseError(AQTCError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DimError(AQTCError, ValueError):
    pass


class RefError(AQTCError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ConfigError(AQTCError, ValueError):
    pass


class DegenerateStepError(AQTCError, ValueError):
    pass


class MissingLabelError(AQTCError, ValueError):
    pass


class EmptyDatasetError(AQTCError, ValueError):
    pass
